"""The twelve acceptance criteria, each at its stated tolerance.

Every test prints a single ``PASS``/``FAIL`` line; the lines are repeated in
the terminal summary. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import contextlib
import math
import os
import struct
import time
from fractions import Fraction

import numpy as np
import pytest

from xception1d import augment as G
from xception1d import audio as A
from xception1d import checkpoint as C
from xception1d import cli
from xception1d import dataset as D
from xception1d import layers as L
from xception1d import model as M
from xception1d import optim as O
from xception1d import stats as S
from xception1d import tensor as T
from xception1d.harness import ClipSet, TrainConfig, train
from xception1d.tensor import Tensor, grad_check

from conftest import ACCEPTANCE_LINES, make_corpus, tone, two_tone_dataset
from oracles import t_two_tailed_p
from test_layers import _checks as layer_checks, separable_oracle
from test_optim import reference_adam

H = 1e-4


@pytest.fixture
def report(capsys):
    """Yield a recorder; on exit print PASS/FAIL for the criterion with its details."""

    @contextlib.contextmanager
    def criterion(number, title):
        details = []
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield details
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            extra = "; ".join(details)
            line = f"{status} {number:2d} {title} [{elapsed:.1f}s]" + (f": {extra}" if extra else "")
            ACCEPTANCE_LINES.append(line)
            with capsys.disabled():
                print("\n" + line)

    return criterion


# -- 1 -------------------------------------------------------------------------

def _extra_layer_checks(rng):
    shape = (2, 3, 7)
    r = Tensor(rng.normal(size=shape))
    mask_seed = int(rng.integers(2 ** 31))
    return {
        "relu": (lambda t: (T.relu(t) * r).sum(), rng.normal(size=shape)),
        "dropout": (lambda t: (L.dropout(t, 0.5, True, np.random.default_rng(mask_seed)) * r).sum(),
                    rng.normal(size=shape)),
        "instance_norm-beta": (lambda t: (L.instance_norm1d(Tensor(rng.normal(size=shape)),
                                                            L.InstanceNorm1dParams(Tensor(np.ones(3)), t)) * r).sum(),
                               rng.normal(size=3)),
    }


def _relu_margin(f, x):
    with T.track_relu_margin() as margin:
        f(Tensor(x))
    return margin.min_abs


def test_01_gradient_checks(report):
    with report(1, "gradient checks (float64, h=1e-4, 20 instances per layer and for the toy model)") as info:
        start = time.perf_counter()
        worst = {}
        for seed in range(20):
            rng = np.random.default_rng(seed)
            checks = {**layer_checks(rng), **_extra_layer_checks(rng)}
            for name, (f, x) in checks.items():
                state = rng.bit_generator.state

                def g(t, f=f, state=state):
                    # functions that draw from rng must see the same draws on every call
                    rng.bit_generator.state = state
                    return f(t)

                worst[name] = max(worst.get(name, 0.0), grad_check(g, x, H))

        cfg = M.ModelConfig.toy(n_classes=3, input_length=256)
        model_x = model_theta = 0.0
        redraws = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            params = M.build(cfg, rng, dtype=np.float64)
            labels = rng.integers(0, 3, size=2)

            def f(t):
                return M.loss_fn(params, cfg, t, labels)

            # keep every relu input at least 10h from the kink
            while True:
                x = rng.normal(size=(2, 1, 256))
                if _relu_margin(f, x) >= 10 * H:
                    break
                redraws += 1
            model_x = max(model_x, grad_check(f, x, H))

            # all parameters at once along a random unit direction; the
            # direction is redrawn if a step of h would bring any relu input
            # within 10h of its kink
            for p in params.values():
                p.grad = None
            T.backward(f(Tensor(x)))

            def moved(direction, step):
                return {k: Tensor(p.data + step * direction[k]) for k, p in params.items()}

            while True:
                direction = {k: rng.normal(size=p.shape) for k, p in params.items()}
                norm = math.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
                direction = {k: d / norm for k, d in direction.items()}
                margins = [_relu_margin(lambda t, s=s: M.loss_fn(moved(direction, s), cfg, t, labels), x)
                           for s in (H, -H)]
                if min(margins) >= 10 * H:
                    break
                redraws += 1
            analytic = sum(float(np.sum(p.grad * direction[k])) for k, p in params.items())
            plus, minus = (float(M.loss_fn(moved(direction, s), cfg, Tensor(x), labels).data) for s in (H, -H))
            numeric = (plus - minus) / (2 * H)
            model_theta = max(model_theta, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))

        elapsed = time.perf_counter() - start
        layer_name, layer_err = max(worst.items(), key=lambda kv: kv[1])
        info.append(f"worst layer {layer_name} {layer_err:.2e}")
        info.append(f"toy model d/dx {model_x:.2e}, d/dtheta {model_theta:.2e} ({redraws} redraws)")
        assert layer_err < 1e-4
        assert model_x < 1e-4 and model_theta < 1e-4
        assert elapsed < 120


# -- 2 -------------------------------------------------------------------------

def test_02_overfit(report, tmp_path, capsys):
    with report(2, "overfit 32 two-tone clips with the toy config") as info:
        start = time.perf_counter()
        x, y = two_tone_dataset(32, seed=0)
        assert np.bincount(y).tolist() == [16, 16]
        train_set = ClipSet.from_arrays(x, y)
        dev_x, dev_y = two_tone_dataset(32, seed=1)
        tc = TrainConfig(epochs=200, batch_size=32, lr=1e-2, weight_decay=0.0, dropout=0.0,
                         augment=None, patience=10 ** 6, seeds=(0,), keep="last")
        ckpt, metrics = train(M.ModelConfig.toy(n_classes=2), tc,
                              {"train": train_set, "dev": ClipSet.from_arrays(dev_x, dev_y)}, seed=0)
        elapsed = time.perf_counter() - start
        hit = next((e for e in metrics.epochs if e.train_accuracy == 1.0 and e.train_loss < 0.01), None)
        final = metrics.epochs[-1]
        info.append(f"first epoch with acc 1.0 and loss < 0.01: {hit.epoch if hit else None}")
        info.append(f"final loss {final.train_loss:.4f}")
        assert hit is not None
        assert elapsed < 300

        # the trained model classifies its own training clips with confidence
        C.save_checkpoint(ckpt, tmp_path / "overfit.xc1d")
        A.write_wav(x[0], tmp_path / "clip.wav")
        assert cli.main(["infer", "--checkpoint", str(tmp_path / "overfit.xc1d"), str(tmp_path / "clip.wav")]) == 0
        _, label, prob = capsys.readouterr().out.splitlines()[-1].split("\t")
        info.append(f"infer on a training clip: class {label} p={float(prob):.4f}")
        assert label == str(y[0]) and float(prob) > 0.99


# -- 3 -------------------------------------------------------------------------

def test_03_op_counts(report):
    with report(3, "separable vs regular multiply-accumulate counts, 50 random tuples") as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            length, s = int(rng.integers(1, 200)), int(rng.choice([1, 3, 5, 7, 9, 11]))
            c_in, n = int(rng.integers(1, 40)), int(rng.integers(1, 40))
            regular, separable = L.measure_macs(length, s, c_in, n)
            assert regular == length * s * c_in * n
            assert separable == length * s * c_in + length * c_in * n
            counts = L.opcount(length, s, c_in, n)
            assert (counts.regular, counts.separable) == (regular, separable)
            assert Fraction(separable, regular) == Fraction(1, n) + Fraction(1, s)
            expected = 1 / n + 1 / s
            worst = max(worst, abs(counts.ratio - expected) / expected)
        info.append(f"counts exact; worst ratio relative error {worst:.1e}")
        assert worst <= 2 * np.finfo(float).eps


# -- 4 -------------------------------------------------------------------------

def test_04_instance_norm(report):
    with report(4, "instance norm statistics, 100 random inputs (float64)") as info:
        rng = np.random.default_rng(4)
        worst_mean = worst_var = 0.0
        for _ in range(100):
            b, c, length = rng.integers(1, 5), rng.integers(1, 9), rng.integers(16, 400)
            scale = np.exp(rng.uniform(np.log(0.5), np.log(50.0), size=(1, c, 1)))
            loc = rng.uniform(-10, 10, size=(1, c, 1))
            x = loc + scale * rng.normal(size=(b, c, length))
            y = L.instance_norm1d(Tensor(x), L.InstanceNorm1dParams(Tensor(np.ones(c)), Tensor(np.zeros(c)))).data
            worst_mean = max(worst_mean, np.abs(y.mean(axis=2)).max())
            worst_var = max(worst_var, np.abs(y.var(axis=2) - 1).max())
        info.append(f"max |mean| {worst_mean:.1e}, max |var - 1| {worst_var:.1e}")
        assert worst_mean < 1e-6 and worst_var < 1e-4


# -- 5 -------------------------------------------------------------------------

def test_05_separable_equivalence(report):
    with report(5, "separable conv vs depthwise-then-pointwise oracle, 100 random shapes") as info:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            b, c, n = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9)
            length, s = int(rng.integers(1, 60)), int(rng.choice([1, 3, 5, 7, 9]))
            x = rng.normal(size=(b, c, length))
            dw, pw, bias = rng.normal(size=(c, 1, s)), rng.normal(size=(n, c, 1)), rng.normal(size=n)
            got = L.separable_conv1d(Tensor(x), L.SeparableConv1dParams(Tensor(dw), Tensor(pw), Tensor(bias))).data
            worst = max(worst, np.abs(got - separable_oracle(x, dw, pw, bias)).max())
        info.append(f"max elementwise difference {worst:.1e}")
        assert worst < 1e-6


# -- 6 -------------------------------------------------------------------------

def test_06_adam_and_plateau(report):
    with report(6, "Adam vs reference on a scalar quadratic (1000 steps); plateau halving") as info:
        params = {"theta": Tensor(np.array([3.0]), requires_grad=True)}
        state = O.AdamState(lr=1e-2, weight_decay=0.0)
        ours = []
        for _ in range(1000):
            # f = (theta - 1.5)^2
            O.adam_step(params, {"theta": 2.0 * (params["theta"].data - 1.5)}, state)
            ours.append(float(params["theta"].data[0]))
        ref = reference_adam(3.0, lambda th: 2.0 * (th - 1.5), 1000, 1e-2)
        gap = max(abs(a - b) for a, b in zip(ours, ref))
        info.append(f"max trajectory gap {gap:.1e}")
        assert gap < 1e-10

        scripts = [
            ([0.5, 0.5, 0.5, 0.5, 0.5], [1, 1, 1, 1, 0.5]),
            ([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [1] * 6),
            ([0.5, 0.4, 0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1], [1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5, 0.25]),
            ([0.5, 0.4, 0.4, 0.6, 0.6, 0.6, 0.6, 0.6], [1, 1, 1, 1, 1, 1, 1, 0.5]),
        ]
        for metrics, expected in scripts:
            sched = O.PlateauSchedule(lr=1.0)
            assert [sched.step(m) for m in metrics] == expected, metrics
        info.append(f"{len(scripts)} scripted sequences exact")


# -- 7 -------------------------------------------------------------------------

def _clip(i):
    rng = np.random.default_rng(i)
    x = tone(200 + 37 * i, amp=0.6) + 0.05 * rng.normal(size=16000)
    return A.AudioClip(np.clip(x, -1, A.MAX_SAMPLE).astype(np.float32), "yes", f"s{i}", f"yes/s{i}_nohash_0.wav")


def _peak_bin(x):
    return int(np.argmax(np.abs(np.fft.rfft(x))))


def test_07_augmentation(report):
    with report(7, "augmentation expansion, thread independence, pitch accuracy, ranges") as info:
        clips = [_clip(i) for i in range(16)]
        cfg = G.AugmentConfig()
        serial = G.expand_training_set(clips, cfg, seed=7, workers=1)
        threaded = G.expand_training_set(clips, cfg, seed=7, workers=4)
        assert len(serial) == 6 * len(clips)
        assert all(a.samples.tobytes() == b.samples.tobytes() for a, b in zip(serial, threaded))
        assert all(c.samples.shape == (16000,) and np.all(c.samples >= -1) and np.all(c.samples < 1)
                   for c in serial)
        info.append(f"{len(clips)} -> {len(serial)} clips, workers 1 and 4 byte-identical")

        worst = 0
        for semitones in (-12, -7, -2, -1, -0.5, 0.5, 1, 2, 5, 7, 12):
            for freq in (300.0, 440.0, 1000.0):
                shifted = G.pitch_shift(tone(freq), semitones)
                # one-second clips: bin k sits at k Hz
                expected = freq * 2 ** (semitones / 12)
                worst = max(worst, abs(_peak_bin(shifted) - expected))
        info.append(f"worst pitch peak offset {worst:.2f} bins")
        assert worst <= 1.0


# -- 8 -------------------------------------------------------------------------

CORPUS_ENV = "XCEPTION1D_SPEECH_COMMANDS_V2"


def test_08_task_algebra(report):
    with report(8, "task and label algebra") as info:
        for version, expected in (("V2", [35, 21, 11, 3]), ("V1", [30, 21, 11, 3])):
            assert [D.make_task(n, version).n_classes for n in D.TASK_NAMES] == expected
        assert D.label_of("marvin", D.make_task("commands-10")) == 10
        for word in D.WORDS[30:]:
            with pytest.raises(D.UnknownWordError):
                D.label_of(word, D.make_task("words-all", "V1"))
        info.append("class counts 35/21/11/3 and 30/21/11/3")

        root = os.environ.get(CORPUS_ENV)
        if not root:
            info.append(f"real-corpus counts not checked ({CORPUS_ENV} unset)")
            return
        manifest = D.scan_corpus(root, "V2", check_readable=False)
        counts = manifest.counts()
        info.append(f"real corpus total {len(manifest.entries)}, test {counts['test']}")
        assert len(manifest.entries) == 105_829 and counts["test"] == 11_005
        assert not manifest.speakers("train") & manifest.speakers("test")


# -- 9 -------------------------------------------------------------------------

def _mutate(blob, rng):
    b = bytearray(blob)
    kind = rng.integers(6)
    if kind == 0:  # flip bytes anywhere
        for i in rng.integers(0, len(b), size=rng.integers(1, 8)):
            b[i] = rng.integers(256)
    elif kind == 1:  # corrupt the header
        for i in rng.integers(0, 44, size=rng.integers(1, 6)):
            b[i] = rng.integers(256)
    elif kind == 2:  # truncate
        del b[rng.integers(0, len(b)):]
    elif kind == 3:  # insert junk
        at = rng.integers(0, len(b) + 1)
        b[at:at] = rng.integers(0, 256, size=rng.integers(1, 32)).astype(np.uint8).tobytes()
    elif kind == 4:  # rewrite a size field
        offset = int(rng.choice([4, 16, 40]))
        b[offset:offset + 4] = struct.pack("<I", int(rng.integers(0, 2 ** 32)))
    else:  # rewrite a format field
        offset = int(rng.choice([20, 22, 24, 32, 34]))
        b[offset:offset + 2] = struct.pack("<H", int(rng.integers(0, 2 ** 16)))
    return bytes(b)


def test_09_wav_round_trip_and_fuzz(report):
    with report(9, "WAV round trip and 10,000 header/body mutations") as info:
        rng = np.random.default_rng(9)
        pcm = np.concatenate([[-32768, 32767, 0, 1, -1], rng.integers(-32768, 32768, size=5000)])
        x = pcm / 32768.0
        back, rate = A.read_wav(A.encode_wav(x))
        assert rate == 16000 and np.array_equal(back, x)

        base = A.encode_wav(rng.uniform(-1, 1, size=200))
        outcomes = {"parsed": 0}
        for _ in range(10_000):
            blob = _mutate(base, rng)
            try:
                samples, _ = A.read_wav(blob)
                assert samples.dtype == np.float32 and samples.size <= (len(blob) - 12) // 2
                outcomes["parsed"] += 1
            except A.WavError as exc:
                outcomes[type(exc).__name__] = outcomes.get(type(exc).__name__, 0) + 1
        info.append("exact round trip; mutations: " + ", ".join(f"{k} {v}" for k, v in sorted(outcomes.items())))


# -- 10 ------------------------------------------------------------------------

def _random_config(rng):
    entry = tuple((int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.choice([1, 3, 5, 9])))
                  for _ in range(rng.integers(1, 4)))
    return M.ModelConfig(
        n_classes=int(rng.integers(2, 12)), n_mod=int(rng.integers(1, 4)), entry_channels=entry,
        block_channels=int(rng.integers(1, 10)), block_kernel=int(rng.choice([1, 3, 5, 9])),
        dropout_p=float(rng.uniform(0, 0.9)), input_length=int(rng.integers(16, 400)),
        residual=bool(rng.integers(2)),
    )


def test_10_checkpoint_round_trip(report, tmp_path):
    with report(10, "checkpoint save/load/forward bit-identical on 10 random models") as info:
        rng = np.random.default_rng(10)
        for i in range(10):
            cfg = _random_config(rng)
            params = M.build(cfg, rng)
            x = rng.normal(size=(3, 1, cfg.input_length)).astype(np.float32)
            before = M.forward(params, cfg, x).data.tobytes()
            path = tmp_path / f"m{i}.xc1d"
            C.save_checkpoint(C.Checkpoint(cfg, params, float(rng.uniform()), i), path)
            loaded = C.load_checkpoint(path)
            assert loaded.config == cfg and loaded.epoch == i
            assert M.forward(loaded.params, loaded.config, x).data.tobytes() == before
        info.append("10/10 identical")


# -- 11 ------------------------------------------------------------------------

def test_11_t_test(report):
    with report(11, "t-test p-values vs numerical integration, 1,000 tuples") as info:
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            n_a, n_b = (int(v) for v in rng.integers(2, 40, size=2))
            s_a, s_b = np.exp(rng.uniform(-3, 2, size=2))
            m_a = rng.uniform(-10, 10)
            m_b = m_a + rng.normal() * rng.choice([0.01, 0.3, 1, 5]) * max(s_a, s_b)
            res = S.t_test(m_a, s_a, n_a, m_b, s_b, n_b)
            worst = max(worst, abs(res.p - t_two_tailed_p(res.t, res.df)))
        info.append(f"max |p - oracle| {worst:.1e}")
        assert worst < 1e-6
        assert S.t_test(95.85, 0.16, 5, 95.85, 0.16, 5).p == 1.0
        assert S.t_test(1.0, 0.0, 4, 1.0, 0.0, 4).p == 1.0
        assert S.t_test(1.0, 0.0, 4, 2.0, 0.0, 4).p == 0.0
        info.append("degenerate cases exact")


# -- 12 ------------------------------------------------------------------------

def test_12_pipeline_determinism(report, tmp_path, capsys):
    with report(12, "two end-to-end toy-corpus runs byte-identical") as info:
        corpus = make_corpus(tmp_path / "corpus", words=("left", "right", "yes", "marvin"))
        outputs = []
        for run, threads in (("a", 1), ("b", 3)):
            manifest = tmp_path / f"manifest_{run}.tsv"
            out = tmp_path / f"run_{run}"
            assert cli.main(["prepare", "--data-dir", str(corpus), "--out", str(manifest)]) == 0
            assert cli.main(["train", "--manifest", str(manifest), "--task", "left-right", "--model", "toy",
                             "--epochs", "2", "--batch-size", "8", "--seed", "3", "--threads", str(threads),
                             "--out", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in [manifest, *sorted(out.iterdir())]})
        capsys.readouterr()
        a, b = outputs
        names = sorted(n for n in a if not n.startswith("manifest"))
        assert names == ["checkpoint.xc1d", "metrics.jsonl", "per_class.tsv"]
        assert a["manifest_a.tsv"] == b["manifest_b.tsv"]
        for name in names:
            assert a[name] == b[name], name
        info.append("manifest, " + ", ".join(names) + " identical (threads 1 vs 3)")
