import numpy as np
import pytest

from ssvepnet.dataio import SubjectSpec, SynthConfig, synth_dataset
from ssvepnet.errors import ConfigError, NumericalError, StateError
from ssvepnet.models import (PRESETS, ScuSpec, TrainConfig, build_deep_scu_cnn, build_recurrent,
                             build_scu_cnn, parse_arch, predict, read_config, train, write_config)
from ssvepnet.nn import grad_check


@pytest.fixture(scope="module")
def clean():
    cfg = SynthConfig(subjects=(SubjectSpec("S01", 6, noise_sigma=0.3),), seed=5)
    return synth_dataset(cfg)


def small(blocks=1, **kw):
    return ScuSpec(n_scu_blocks=blocks, length=kw.pop("length", 200), **kw)


# -- topology --------------------------------------------------------------------

def test_default_trace():
    spec = ScuSpec()
    assert spec.length_trace() == [1500, 186]
    net = build_scu_cnn(spec)
    assert [s[-1] for s in net.shape_trace[:5]] == [1500, 373, 373, 373, 186]
    assert net.shape_trace[-1] == (4,)
    assert spec.flat_features() == 2976
    assert net.name == "scu-cnn"


def test_five_block_trace():
    spec = ScuSpec(n_scu_blocks=5)
    assert spec.length_trace() == [1500, 186, 92, 45, 21, 9]
    assert spec.flat_features() == 144
    assert build_deep_scu_cnn(spec).shape_trace[-3] == (144,)


def test_block_limits():
    with pytest.raises(ConfigError):
        ScuSpec(n_scu_blocks=6)
    with pytest.raises(ConfigError, match="SCU block 3"):
        ScuSpec(n_scu_blocks=3, length=40).length_trace()
    with pytest.raises(ConfigError):
        build_deep_scu_cnn(ScuSpec())


def test_one_block_deep_equals_scu():
    a = build_scu_cnn(ScuSpec())
    b = parse_arch("deep-scu:1")
    assert a.descriptor()["layers"] == b.descriptor()["layers"]


def test_recurrent_parameter_count():
    net = build_recurrent("vanilla", hidden=64)
    assert net.n_parameters() == 64 * (7 + 64) + 64 + (64 * 4 + 4)


def test_recurrent_zero_input_uniform():
    net = build_recurrent("vanilla", hidden=8, length=30)
    np.testing.assert_allclose(net.predict_proba(np.zeros((2, 7, 30))), 0.25, atol=1e-15)


def test_recurrent_bptt_20_steps():
    rng = np.random.default_rng(0)
    for kind in ("vanilla", "lstm", "gru"):
        net = build_recurrent(kind, hidden=5, length=20, seed=1)
        assert grad_check(net, rng.standard_normal((2, 7, 20)), [0, 3]) < 1e-5


def test_deep_grad_check():
    net = build_scu_cnn(ScuSpec(n_scu_blocks=2, filters=3, length=120, seed=2))
    x = np.random.default_rng(1).standard_normal((2, 7, 120))
    assert grad_check(net, x, [1, 2]) < 1e-4


def test_untrained_predict_is_state_error():
    with pytest.raises(StateError):
        predict(build_scu_cnn(), np.zeros((1, 7, 1500)))


def test_parse_arch_names():
    assert parse_arch("lstm").name == "lstm"
    assert parse_arch("rnn").name == "vanilla"
    assert parse_arch("deep-scu:4").name == "deep-scu:4"
    with pytest.raises(ConfigError):
        parse_arch("transformer")


# -- training --------------------------------------------------------------------

def test_training_descends_and_memorises(clean):
    net = build_scu_cnn()
    hist = train(net, clean, cfg=TrainConfig(epochs=20, batch_size=8)).history
    assert len(hist) == 20
    assert hist[-1] < hist[0]
    labels, probs = predict(net, clean)
    assert np.mean(labels == clean.labels) >= 0.99
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_zero_lr_leaves_parameters(clean):
    net = build_scu_cnn(ScuSpec(dropout_p=0.0))
    before = [p.copy() for p in net.parameters()]
    hist = train(net, clean, cfg=TrainConfig(epochs=3, lr=0.0, shuffle=False, batch_size=24)).history
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))
    assert hist[0] == hist[1] == hist[2]


def test_training_is_bit_deterministic(clean):
    runs = []
    for _ in range(2):
        net = build_scu_cnn(ScuSpec(seed=3))
        runs.append((train(net, clean, cfg=TrainConfig(epochs=3, seed=4)).history,
                     [p.copy() for p in net.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_regularisation_pressure(clean):
    norms = []
    for lam in (0.0, 1e-2):
        net = build_scu_cnn(ScuSpec(seed=6))
        train(net, clean, cfg=TrainConfig(epochs=10, lambda_l2=lam, seed=1))
        norms.append(sum(float(np.sum(w * w)) for w in net.weights()))
    assert norms[1] <= norms[0]


def test_duplicate_trials_predict_identically(clean):
    net = build_scu_cnn()
    train(net, clean, cfg=TrainConfig(epochs=1))
    x = np.repeat(clean.samples()[:1], 3, axis=0)
    labels, probs = predict(net, x)
    assert len(set(labels)) == 1
    assert np.array_equal(probs[0], probs[2])
    np.testing.assert_array_equal(predict(net, x)[1], probs)


def test_non_finite_loss_names_epoch_and_batch(clean):
    net = build_scu_cnn()
    x = clean.samples().copy()
    x[5, 0, 0] = np.inf
    with pytest.raises(NumericalError, match="epoch 0, batch 0"):
        train(net, x, clean.labels, TrainConfig(epochs=1, shuffle=False, batch_size=8))


def test_train_preconditions():
    net = build_scu_cnn(small())
    with pytest.raises(ConfigError):
        train(net, np.zeros((0, 7, 200)), np.zeros(0, int))
    with pytest.raises(ConfigError):
        train(net, np.zeros((2, 7, 200)), np.array([0, 4]))
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


# -- config file ------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg, spec = TrainConfig(epochs=7, lr=3e-4, seed=9), ScuSpec(n_scu_blocks=3, filters=8)
    write_config(tmp_path / "c.cfg", cfg, spec)
    assert read_config(tmp_path / "c.cfg") == (cfg, spec)


def test_config_presets_and_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("preset = 'paper-results'  # lambda 1e-3\nepochs = 5\n")
    cfg, _ = read_config(p)
    assert cfg.lambda_l2 == PRESETS["paper-results"].lambda_l2 == 1e-3
    assert cfg.epochs == 5
    p.write_text("colour = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config(p)
