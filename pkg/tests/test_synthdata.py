import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from bwnet.errors import ConfigError, FormatError
from bwnet.metrics import compute_eer, cosine_score, evaluate
from bwnet.layers import build_micro_resnet
from bwnet.synthdata import (
    SyntheticSpeakerConfig,
    export_dataset,
    generate_dataset,
    load_tensor_file,
    load_utterance_store,
    save_tensor_file,
)
from bwnet.training import TrainConfig, train_network


def small_config(**overrides):
    base = dict(num_speakers=4, utterances_per_speaker=10, feature_height=16,
                feature_width=16, sigma_within=0.3, separation=1.2,
                time_shift_max=0, seed=0)
    base.update(overrides)
    return SyntheticSpeakerConfig(**base)


class TestDeterminism:
    def test_same_seed_is_byte_identical(self):
        a = generate_dataset(small_config())
        b = generate_dataset(small_config())
        assert a.features.tobytes() == b.features.tobytes()
        assert a.trials == b.trials
        assert a.utterance_ids == b.utterance_ids

    def test_different_seeds_differ(self):
        a = generate_dataset(small_config(seed=0))
        b = generate_dataset(small_config(seed=1))
        assert a.features.tobytes() != b.features.tobytes()


class TestTrialConstruction:
    def test_label_balance_within_one(self):
        dataset = generate_dataset(small_config(utterances_per_speaker=15))
        targets = sum(t.label for t in dataset.trials)
        nontargets = len(dataset.trials) - targets
        assert abs(targets - nontargets) <= 1

    def test_targets_share_speakers_nontargets_do_not(self):
        dataset = generate_dataset(small_config())
        speaker_of = dict(zip(dataset.utterance_ids, dataset.speaker_ids))
        for trial in dataset.trials:
            same = speaker_of[trial.enroll] == speaker_of[trial.test]
            assert same == bool(trial.label)

    def test_trials_use_only_heldout_utterances(self):
        dataset = generate_dataset(small_config())
        held = {dataset.utterance_ids[i] for i in dataset.holdout_index}
        for trial in dataset.trials:
            assert trial.enroll in held and trial.test in held


class TestDegenerateSeparability:
    def test_zero_jitter_makes_speaker_utterances_identical(self):
        dataset = generate_dataset(small_config(sigma_within=0.0))
        for s in range(4):
            rows = np.flatnonzero(dataset.speaker_ids == s)
            first = dataset.features[rows[0]]
            for row in rows[1:]:
                assert np.array_equal(dataset.features[row], first)

    def test_zero_jitter_trained_model_has_zero_eer(self):
        config = small_config(sigma_within=0.0, utterances_per_speaker=6,
                              num_speakers=3)
        dataset = generate_dataset(config)
        spec = build_micro_resnet(1, [4], num_classes=3, embedding_dim=8)
        state, _ = train_network(spec, dataset.train_split(),
                                 TrainConfig(epochs=2, batch_size=4, seed=0))
        report = evaluate(spec, state.params, dataset.trials,
                          dataset.utterance_store())
        assert report.eer == 0.0


class TestSeparabilityDial:
    def test_raw_feature_eer_decreases_with_separation(self):
        eers = []
        for separation in (0.3, 0.8, 2.0):
            config = small_config(sigma_within=0.6, separation=separation,
                                  utterances_per_speaker=16, num_speakers=6)
            dataset = generate_dataset(config)
            store = dataset.utterance_store()
            targets, nontargets = [], []
            for trial in dataset.trials:
                score = cosine_score(store[trial.enroll].ravel(),
                                     store[trial.test].ravel())
                (targets if trial.label else nontargets).append(score)
            eer, _ = compute_eer(targets, nontargets)
            eers.append(eer)
        assert eers[0] >= eers[1] >= eers[2]
        assert eers[0] > eers[2]


class TestLinearProbe:
    def test_task_is_linearly_learnable(self):
        # independent check that the default-scale task is learnable before
        # any binary network is trained on it
        config = SyntheticSpeakerConfig(num_speakers=10, utterances_per_speaker=20,
                                        sigma_within=0.2, separation=1.2,
                                        time_shift_max=1, seed=0)
        dataset = generate_dataset(config)
        X_train, y_train = dataset.train_split()
        probe = LogisticRegression(max_iter=2000)
        probe.fit(X_train.reshape(len(X_train), -1), y_train)
        X_held = dataset.features[dataset.holdout_index]
        y_held = dataset.speaker_ids[dataset.holdout_index]
        accuracy = probe.score(X_held.reshape(len(X_held), -1), y_held)
        assert accuracy > 0.9


class TestConfigValidation:
    def test_single_speaker_rejected(self):
        with pytest.raises(ConfigError):
            small_config(num_speakers=1)

    def test_single_utterance_rejected(self):
        with pytest.raises(ConfigError):
            small_config(utterances_per_speaker=1)

    def test_negative_jitter_rejected(self):
        with pytest.raises(ConfigError):
            small_config(sigma_within=-0.1)

    def test_holdout_bounds(self):
        with pytest.raises(ConfigError):
            small_config(holdout_fraction=1.0)
        with pytest.raises(ConfigError):
            small_config(holdout_fraction=0.99, utterances_per_speaker=2)


class TestExport:
    def test_tensor_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((5, 1, 4, 6)).astype(np.float32)
        path = tmp_path / "t.bin"
        save_tensor_file(path, arr)
        assert np.array_equal(load_tensor_file(path), arr)

    def test_tensor_file_length_mismatch(self, tmp_path):
        path = tmp_path / "t.bin"
        save_tensor_file(path, np.zeros((2, 2), np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_tensor_file(path)

    def test_export_and_reload_store(self, tmp_path):
        dataset = generate_dataset(small_config())
        paths = export_dataset(dataset, tmp_path)
        store = load_utterance_store(paths["utterances"])
        assert set(store) == set(dataset.utterance_ids)
        for i, uid in enumerate(dataset.utterance_ids):
            assert np.array_equal(store[uid], dataset.features[i])
