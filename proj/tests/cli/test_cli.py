"""End-to-end checks of the mmtpp binary: exit codes, error JSON, report
formats and byte-identical reruns."""

import json
import os
import struct
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

MMTPP = None


def run(args, cwd, ok=True):
    p = subprocess.run([MMTPP, *args], cwd=cwd, capture_output=True, text=True)
    if ok and p.returncode != 0:
        raise AssertionError(f"{args} failed ({p.returncode}): {p.stderr}")
    return p


def pipeline(cwd):
    """build-taxi -> encode -> train (1, 2) -> eval -> generate, plus the
    corpus-level commands. Everything goes under cwd with relative paths."""
    run(["build-taxi", "--synthetic-trips", "1500", "--seed", "4", "--synthetic-raster", "300x450",
         "--target", "12", "--out", "taxi"], cwd)
    run(["synth", "danmaku", "--sequences", "6", "--events", "200", "--seed", "9", "--out", "d.jsonl"], cwd)
    run(["quantiles", "d.jsonl", "--out", "q.csv"], cwd)
    run(["stats", "d.jsonl", "--out", "s.csv"], cwd)
    run(["compress", "d.jsonl", "--random-drop", "0.25", "--seed", "3", "--budget", "512,2048",
         "--out", "c.csv"], cwd)
    run(["encode", "--input", "taxi/sequences.jsonl", "--compress", "0.2", "--budget", "600",
         "--out", "enc"], cwd)
    run(["fit", "d.jsonl", "--model", "hawkes", "--max-iters", "200", "--out", "hk.json"], cwd)
    run(["loglik", "d.jsonl", "--model", "hk.json", "--out", "ll.csv"], cwd)
    model = ["--dim", "16", "--layers", "1", "--heads", "2", "--context", "256"]
    run(["train", "--stage", "1", "--corpus", "taxi/sequences.jsonl", *model, "--epochs", "1",
         "--lr", "3e-3", "--seed", "7", "--policy", "adaptive:0.2", "--out", "ck/s1"], cwd)
    run(["train", "--stage", "2", "--init", "ck/s1", "--corpus", "taxi/sequences.jsonl", "--epochs", "1",
         "--split-stride", "8", "--out", "ck/s2"], cwd)
    run(["eval", "--checkpoint", "ck/s1", "--test", "taxi/sequences.jsonl", "--policy", "adaptive:0.2",
         "--edges", "0,20,40,inf", "--out", "ev"], cwd)
    run(["generate", "--task", "time", "--checkpoint", "ck/s2", "--input", "taxi/sequences.jsonl",
         "--temperature", "0.7", "--seed", "2", "--out", "gen.csv"], cwd)


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.a = cls.root / "a"
        cls.b = cls.root / "b"
        cls.a.mkdir()
        cls.b.mkdir()
        pipeline(cls.a)
        pipeline(cls.b)
        # Snapshot before the other tests add files.
        cls.files_a = cls.walk(cls.a)
        cls.files_b = cls.walk(cls.b)

    @staticmethod
    def walk(d):
        return {p.relative_to(d): p.read_bytes() for p in d.rglob("*") if p.is_file()}

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_reruns_are_byte_identical(self):
        self.assertEqual(sorted(self.files_a), sorted(self.files_b))
        self.assertGreater(len(self.files_a), 20)
        for f, data in self.files_a.items():
            self.assertEqual(data, self.files_b[f], str(f))

    def test_manifests(self):
        for name in ["taxi/manifest.json", "enc/manifest.json", "ck/s1.manifest.json", "ev/manifest.json",
                     "q.csv.manifest.json", "hk.json.manifest.json"]:
            m = json.loads((self.a / name).read_text())
            self.assertEqual(set(m), {"tool", "subcommand", "config", "config_hash", "seed", "versions",
                                      "outputs"}, name)
            self.assertTrue(m["config_hash"].startswith("fnv1a64:"))
            self.assertIn("mmtpp", m["versions"])
        self.assertEqual(json.loads((self.a / "ck/s1.manifest.json").read_text())["seed"], 7)

    def test_quantiles_table(self):
        lines = (self.a / "q.csv").read_text().splitlines()
        self.assertEqual(lines[0], "percentile,value")
        pct = [l.split(",")[0] for l in lines[1:]]
        self.assertEqual(pct, ["0.050", "0.100", "0.200", "0.250", "0.500", "0.750", "0.900", "0.950",
                               "1.000"])
        values = [float(l.split(",")[1]) for l in lines[1:]]
        self.assertEqual(values, sorted(values))

    def test_compress_report(self):
        lines = (self.a / "c.csv").read_text().splitlines()
        self.assertEqual(lines[0], "policy,budget,mean_events,max_events,compression_ratio")
        self.assertEqual(len(lines), 5)

    def test_taxi_outputs(self):
        report = json.loads((self.a / "taxi/report.json").read_text())
        self.assertEqual(report["sequences"], 12)
        self.assertEqual(report["patches_written"], report["events"])
        p = run(["validate", "taxi/sequences.jsonl"], self.a)
        self.assertTrue(json.loads(p.stdout)["valid"])
        png = (self.a / "taxi/patches/seq00000_ev000.png").read_bytes()
        self.assertEqual(png[:8], b"\x89PNG\r\n\x1a\n")
        self.assertEqual(struct.unpack(">II", png[16:24]), (224, 224))

    def test_text_and_binary_streams_agree(self):
        run(["encode", "--input", "taxi/sequences.jsonl", "--compress", "0.2", "--budget", "600",
             "--vocab", "enc/vocab.json", "--format", "binary", "--out", "encb"], self.a)
        for i in range(12):
            tokens = (self.a / f"enc/seq{i:05d}.tok").read_text().split()
            raw = (self.a / f"encb/seq{i:05d}.bin").read_bytes()
            self.assertEqual(len(raw), 4 * len(tokens))
            self.assertLessEqual(len(tokens), 600)
            vocab = json.loads((self.a / "enc/vocab.json").read_text())
            ids = list(struct.unpack(f"<{len(tokens)}i", raw))
            self.assertEqual(ids, [vocab[t] for t in tokens])

    def test_usage_errors_exit_2(self):
        for args in (["quantiles", "d.jsonl", "--nope"], ["frobnicate"], [],
                     ["compress", "d.jsonl", "--random-drop", "0.2"],
                     ["train", "--stage", "1", "--corpus", "d.jsonl", "--out", "x"]):
            p = run(args, self.a, ok=False)
            self.assertEqual(p.returncode, 2, args)
            self.assertEqual(json.loads(p.stderr.strip().splitlines()[-1])["error"], "UsageError")

    def test_domain_errors_exit_1(self):
        bad = self.a / "bad.jsonl"
        bad.write_text(json.dumps({"horizon": 2.0, "type_count": 2, "time_unit": "s", "events": [
            {"time": 0.5, "type": 0, "text": "a", "image": None},
            {"time": 0.4, "type": 1, "text": "b", "image": None}]}) + "\n")
        p = run(["validate", "bad.jsonl"], self.a, ok=False)
        self.assertEqual(p.returncode, 1)
        err = json.loads(p.stderr)
        self.assertEqual(err["error"], "NonMonotoneTime")
        self.assertEqual(err["index"], 1)

        garbage = self.a / "garbage.jsonl"
        garbage.write_text("{not json\n")
        p = run(["stats", "garbage.jsonl"], self.a, ok=False)
        self.assertEqual(p.returncode, 1)
        self.assertEqual(json.loads(p.stderr)["error"], "ParseError")

    def test_help_exits_0(self):
        p = run(["--help"], self.a, ok=False)
        self.assertEqual(p.returncode, 0)
        for sub in ["validate", "stats", "quantiles", "encode", "compress", "build-taxi", "fit", "loglik",
                    "train", "generate", "eval", "compare"]:
            self.assertIn(sub, p.stdout)


if __name__ == "__main__":
    MMTPP = os.path.abspath(sys.argv.pop(1))
    unittest.main()
