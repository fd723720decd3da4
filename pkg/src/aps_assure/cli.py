"""Command-line front end for the assurance pipeline.

Exit codes: 0 success, 1 domain failure (violated property, contradicted
case), 2 usage or I/O error.  All commands are deterministic given seeds;
APS_ASSURE_THREADS caps fan-out parallelism.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import audit as audit_mod
from . import dataset as ds
from . import gsn
from . import plots
from . import simulator as sim
from .dsl import parse_dsl
from .nn import TrainingConfig, load_model, save_model, train
from .properties import suite_properties
from .verifier import VerifierConfig, verdict_to_json, verify


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("APS_ASSURE_THREADS", "1")))
    except ValueError:
        return 1


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read {path}: {exc}")


def _write_json(doc, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@click.group()
def main():
    """Assurance pipeline for an ML glucose predictor."""


# --- simulate ----------------------------------------------------------------

def _sample_patients(total: int, seed: int) -> list:
    """Total patients interleaved across groups (balanced as far as possible)."""
    per_group = -(-total // len(sim.GROUPS))
    blocked = sim.sample_cohort(per_group, seed)
    by_group = [blocked[g * per_group:(g + 1) * per_group]
                for g in range(len(sim.GROUPS))]
    interleaved = [p for k in range(per_group) for grp in by_group for p in [grp[k]]]
    return interleaved[:total]


@main.command()
@click.option("--patients", type=int, required=True, help="total cohort size")
@click.option("--days", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def simulate(patients, days, seed, out_dir):
    """Simulate a cohort and export accepted traces as CSV."""
    if days <= 0:
        raise click.UsageError("--days must be positive")
    if patients <= 0:
        raise click.UsageError("--patients must be positive")
    cohort = _sample_patients(patients, seed)
    cfg_days = days

    def run_one(idx_p):
        idx, p = idx_p
        cfg = sim.SimConfig(days=cfg_days, seed=seed + 1000 + idx)
        rng = np.random.default_rng(cfg.seed)
        meals = sim.generate_meals(cfg, rng)
        return sim.simulate_patient(p, cfg, meals)

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        traces = list(pool.map(run_one, enumerate(cohort)))

    accepted, rejected = [], []
    for tr in traces:
        ok, reason = sim.validate_trace(tr)
        (accepted if ok else rejected).append((tr, reason))
    if not accepted:
        raise click.ClickException("no accepted traces (all rejected)")
    sim.export_traces([tr for tr, _ in accepted], out_dir)
    plots.plot_trace(accepted[0][0], Path(out_dir) / "trace_example.png")
    click.echo(f"accepted {len(accepted)} traces, rejected {len(rejected)}")
    for tr, reason in rejected:
        click.echo(f"  rejected {tr.patient_id}: {reason}")
    click.echo(f"wrote {out_dir} ({len(accepted[0][0])} rows per trace)")


# --- train / ablate ----------------------------------------------------------

def _load_split(data_dir, seed):
    traces = sim.import_cohort(data_dir)
    windows = ds.windows_from_traces(traces)
    return ds.split(windows, fraction=0.8, seed=seed)


def _parse_hidden(text):
    try:
        sizes = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise click.UsageError(f"bad --hidden value {text!r}")
    if not sizes or any(s < 1 for s in sizes):
        raise click.UsageError("hidden sizes must be positive integers")
    return sizes


@main.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--hidden", default="8,8", show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "model_path", type=click.Path(), required=True)
def train_cmd(data_dir, hidden, epochs, batch_size, seed, model_path):
    """Train the predictor and write the model plus loss history."""
    if epochs <= 0:
        raise click.UsageError("--epochs must be positive")
    train_set, test_set = _load_split(data_dir, seed)
    cfg = TrainingConfig(hidden=_parse_hidden(hidden), epochs=epochs,
                         batch_size=batch_size, seed=seed)
    net, history = train(train_set, cfg)
    Path(model_path).parent.mkdir(parents=True, exist_ok=True)
    save_model(net, model_path)
    base = Path(model_path).with_suffix("")
    hist_path = Path(f"{base}_loss.csv")
    with open(hist_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for k, (tl, vl) in enumerate(history):
            fh.write(f"{k + 1},{tl!r},{vl!r}\n")
    plots.plot_loss_history(history, f"{base}_loss.png")
    test_rmse = ds.rmse(net, test_set)
    click.echo(f"trained {net.dims}; test RMSE {test_rmse:.3f} mg/dL")
    click.echo(f"wrote {model_path}, {hist_path}, {base}_loss.png")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--hidden-grid", default="8,10,20,64,128,200", show_default=True,
              help="first-hidden-layer sizes; second layer fixed at 8")
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_csv", type=click.Path(), required=True)
def ablate(data_dir, hidden_grid, epochs, seed, out_csv):
    """Hidden-size ablation: RMSE per (h1, 8) combination."""
    h1_sizes = [int(v) for v in hidden_grid.split(",")]
    train_set, test_set = _load_split(data_dir, seed)
    rows = []
    for h1 in h1_sizes:
        cfg = TrainingConfig(hidden=(h1, 8), epochs=epochs, seed=seed)
        net, _ = train(train_set, cfg)
        value = ds.rmse(net, test_set)
        rows.append((h1, 8, value))
        click.echo(f"hidden ({h1}, 8): RMSE {value:.3f} mg/dL")
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w") as fh:
        fh.write("h1,h2,rmse_mgdl\n")
        for h1, h2, value in rows:
            fh.write(f"{h1},{h2},{value!r}\n")
    png = str(Path(out_csv).with_suffix(".png"))
    plots.plot_ablation(rows, png, threshold=12.0)
    click.echo(f"wrote {out_csv}, {png}")


# --- evaluate ----------------------------------------------------------------

@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=12.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="split seed (must match training for a held-out test set)")
@click.option("--out", "out_json", type=click.Path(), default=None)
def evaluate(model_path, data_dir, threshold, seed, out_json):
    """Pooled test RMSE against the pass threshold; emits evidence JSON."""
    net = load_model(model_path)
    _, test_set = _load_split(data_dir, seed)
    from .verifier import model_hash
    evidence = ds.check_ml_rq1(net, test_set, threshold, model_hash(net))
    click.echo(json.dumps(evidence, indent=2))
    if out_json:
        _write_json(evidence, out_json)
    if not evidence["pass"]:
        raise SystemExit(1)


# --- verify ------------------------------------------------------------------

def _verifier_config(timeout, max_subproblems, falsify_samples, seed):
    return VerifierConfig(timeout=timeout, max_subproblems=max_subproblems,
                          falsify_samples=falsify_samples, seed=seed)


@main.command("verify")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--property", "prop_path", type=click.Path(exists=True), required=True)
@click.option("--timeout", type=float, default=300.0, show_default=True)
@click.option("--max-subproblems", type=int, default=200_000, show_default=True)
@click.option("--falsify-samples", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_json", type=click.Path(), default=None)
def verify_cmd(model_path, prop_path, timeout, max_subproblems,
               falsify_samples, seed, out_json):
    """Verify one property file against a model; exit 1 on a counterexample."""
    net = load_model(model_path)
    with open(prop_path) as fh:
        prop = parse_dsl(fh.read())
    cfg = _verifier_config(timeout, max_subproblems, falsify_samples, seed)
    verdict = verify(net, prop, cfg)
    doc = verdict_to_json(verdict, prop.id, net, cfg)
    click.echo(json.dumps(doc, indent=2))
    if out_json:
        _write_json(doc, out_json)
    if verdict.outcome == "Counterexample":
        raise SystemExit(1)


@main.command("verify-suite")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--thresholds", "thresholds_path", type=click.Path(exists=True),
              default=None, help="JSON with delta/alpha overrides")
@click.option("--timeout", type=float, default=300.0, show_default=True)
@click.option("--max-subproblems", type=int, default=200_000, show_default=True)
@click.option("--falsify-samples", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def verify_suite(model_path, thresholds_path, timeout, max_subproblems,
                 falsify_samples, seed, out_dir):
    """Run the pinned property suite; writes a per-row report + verdicts."""
    net = load_model(model_path)
    overrides = _read_json(thresholds_path) if thresholds_path else {}
    props = suite_properties(**{k: overrides[k] for k in ("delta", "alpha")
                                if k in overrides})
    cfg = _verifier_config(timeout, max_subproblems, falsify_samples, seed)

    def run_one(item):
        row, prop = item
        t0 = time.monotonic()
        verdict = verify(net, prop, cfg)
        doc = verdict_to_json(verdict, prop.id, net, cfg)
        doc["row"] = row
        doc["stats"]["wall_time"] = time.monotonic() - t0
        return row, prop.id, verdict, doc

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        results = list(pool.map(run_one, props))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "suite.csv", "w") as fh:
        fh.write("row,property_id,outcome,reason,wall_time_s,subproblems\n")
        for row, pid, verdict, doc in results:
            fh.write(f"{row},{pid},{verdict.outcome},{verdict.reason},"
                     f"{doc['stats']['wall_time']:.2f},"
                     f"{doc['stats'].get('subproblems', 0)}\n")
    _write_json([doc for *_, doc in results], out / "verdicts.json")
    for row, pid, verdict, _ in results:
        click.echo(f"{row:6s} {pid:10s} {verdict.outcome:15s} {verdict.reason}")
    click.echo(f"wrote {out / 'suite.csv'}, {out / 'verdicts.json'}")


# --- audit -------------------------------------------------------------------

@main.command("audit")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--context", "context_path", type=click.Path(exists=True), required=True)
@click.option("--design", "design_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_json", type=click.Path(), default=None)
def audit_cmd(data_dir, context_path, design_path, out_json):
    """Audit the dataset against the data requirements."""
    traces = sim.import_cohort(data_dir)
    context = audit_mod.AuditContext.from_json(_read_json(context_path))
    design = audit_mod.DesignSpec.from_json(_read_json(design_path))
    report = audit_mod.audit(traces, context, design)
    click.echo(audit_mod.render_report(report, "text"), nl=False)
    if out_json:
        _write_json(report.to_json(), out_json)
        png = str(Path(out_json).with_suffix(".png"))
        plots.plot_glycemic_fractions(report.fractions, png)
        click.echo(f"wrote {out_json}, {png}")


# --- case --------------------------------------------------------------------

@main.group()
def case():
    """Assurance-case operations."""


@case.command("init")
@click.option("--out", "case_path", type=click.Path(), required=True)
def case_init(case_path):
    c = gsn.builtin_template()
    gsn.save_case(c, case_path)
    click.echo(f"wrote {case_path} ({len(c.nodes)} nodes, {len(c.links)} links)")


@case.command("instantiate")
@click.option("--case", "case_path", type=click.Path(exists=True), required=True)
@click.option("--profile", "profile_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def case_instantiate(case_path, profile_path, out_path):
    c = gsn.load_case(case_path)
    try:
        c = gsn.instantiate(c, _read_json(profile_path))
    except (gsn.InstantiationError, ValueError) as exc:
        raise click.ClickException(str(exc))
    gsn.save_case(c, out_path)
    click.echo(f"wrote {out_path}")


_ARTIFACT_KIND_HINTS = (
    ("requirements", "audit_report"),
    ("outcome", "verification_verdict"),
    ("threshold", "rmse_eval"),
)


def _infer_artifact_kind(doc: dict) -> str:
    if doc.get("kind") in gsn.ARTIFACT_KINDS:
        return doc["kind"]
    for key, kind in _ARTIFACT_KIND_HINTS:
        if key in doc:
            return kind
    return "manual"


@case.command("bind")
@click.option("--case", "case_path", type=click.Path(exists=True), required=True)
@click.option("--solution", "solution_id", required=True)
@click.option("--artifact", "artifact_path", type=click.Path(exists=True), required=True)
@click.option("--kind", "kind", default=None,
              type=click.Choice(gsn.ARTIFACT_KINDS))
@click.option("--out", "out_path", type=click.Path(), required=True)
def case_bind(case_path, solution_id, artifact_path, kind, out_path):
    c = gsn.load_case(case_path)
    payload = _read_json(artifact_path)
    try:
        c = gsn.bind_evidence(c, solution_id, kind or _infer_artifact_kind(payload),
                              payload)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(str(exc))
    gsn.save_case(c, out_path)
    click.echo(f"bound {artifact_path} to {solution_id}; wrote {out_path}")


@case.command("status")
@click.option("--case", "case_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def case_status(case_path, as_json):
    """Evaluate goal statuses; exit 1 unless the root goal holds."""
    c = gsn.load_case(case_path)
    problems = gsn.validate(c)
    if problems:
        raise click.ClickException("; ".join(problems))
    st = gsn.evaluate_status(c)
    root = gsn.root_goal(c)
    if as_json:
        click.echo(json.dumps({"root": root, "statuses": st.statuses}, indent=2))
    else:
        for nid in sorted(st.statuses):
            click.echo(f"{nid:14s} {st.statuses[nid]}")
        click.echo(f"root goal {root}: {st[root]}")
    if st[root] not in ("Supported", "PartiallySupported"):
        raise SystemExit(1)


@case.command("render")
@click.option("--case", "case_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def case_render(case_path, out_path):
    c = gsn.load_case(case_path)
    dot = gsn.export_dot(c, gsn.evaluate_status(c))
    Path(out_path).write_text(dot)
    click.echo(f"wrote {out_path}")


# --- assure ------------------------------------------------------------------

DEFAULT_PROFILE_VALUES = {
    "alpha1": 30, "alpha2": 60, "alpha3": 120, "beta": 180,
    "thres": 12, "hidden": "(8, 8)", "days": 40, "split": "80/20",
    "age_range": "[7, 65]", "weight_range": "[20, 118]",
}


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def assure(config_path):
    """End-to-end run: simulate, train, evaluate, verify, audit, case status."""
    cfg = _read_json(config_path)
    work = Path(cfg.get("workdir", "assure-out"))
    work.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    ctx = click.get_current_context()

    traces_dir = work / "traces"
    ctx.invoke(simulate, patients=int(cfg.get("patients", 9)),
               days=int(cfg.get("days", 5)), seed=seed, out_dir=str(traces_dir))

    model_path = work / "model.json"
    hidden = ",".join(str(h) for h in cfg.get("hidden", [8, 8]))
    ctx.invoke(train_cmd, data_dir=str(traces_dir), hidden=hidden,
               epochs=int(cfg.get("epochs", 20)), batch_size=int(cfg.get("batch_size", 64)),
               seed=seed, model_path=str(model_path))

    net = load_model(model_path)
    from .verifier import model_hash
    train_set, test_set = _load_split(traces_dir, seed)
    threshold = float(cfg.get("threshold", 12.0))
    rmse_evidence = ds.check_ml_rq1(net, test_set, threshold, model_hash(net))
    _write_json(rmse_evidence, work / "rmse.json")

    vcfg_doc = cfg.get("verifier", {})
    vcfg = _verifier_config(float(vcfg_doc.get("timeout", 300.0)),
                            int(vcfg_doc.get("max_subproblems", 200_000)),
                            int(vcfg_doc.get("falsify_samples", 10_000)), seed)
    suite_over = cfg.get("suite", {})
    props = suite_properties(**{k: suite_over[k] for k in ("delta", "alpha")
                                if k in suite_over})

    def run_prop(item):
        row, prop = item
        verdict = verify(net, prop, vcfg)
        doc = verdict_to_json(verdict, prop.id, net, vcfg)
        doc["row"] = row
        return doc

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        verdicts = list(pool.map(run_prop, props))
    _write_json(verdicts, work / "verdicts.json")

    traces = sim.import_cohort(traces_dir)
    context = audit_mod.AuditContext.from_json(cfg["context"])
    design = audit_mod.DesignSpec.from_json(cfg.get("design", {}))
    report = audit_mod.audit(traces, context, design)
    _write_json(report.to_json(), work / "audit.json")

    profile = cfg.get("profile", {"mode": "Population",
                                  "values": DEFAULT_PROFILE_VALUES})
    c = gsn.instantiate(gsn.builtin_template(), profile)
    c = gsn.bind_evidence(c, "Sn-RMSE", "rmse_eval", rmse_evidence)
    for doc in verdicts:
        c = gsn.bind_evidence(c, "Sn-VERIFY", "verification_verdict", doc)
    c = gsn.bind_evidence(c, "Sn-AUDIT", "audit_report", report.to_json())

    # Learning-process evidence: loss curve must show non-increasing val loss.
    _, history = train(train_set, TrainingConfig(
        hidden=tuple(cfg.get("hidden", [8, 8])),
        epochs=int(cfg.get("epochs", 20)),
        batch_size=int(cfg.get("batch_size", 64)), seed=seed))
    improved = history[-1][1] <= history[0][1]
    c = gsn.bind_evidence(c, "Sn-LEARN", "manual", {
        "pass": "positive" if improved else "negative",
        "note": "validation loss decreased over training",
        "val_loss_first": history[0][1], "val_loss_last": history[-1][1]})

    # Robustness: held-out whole patients.
    rtrain, rtest = ds.split(ds.windows_from_traces(traces), 0.8, seed, by_patient=True)
    robust = ds.check_ml_rq1(net, rtest, threshold, model_hash(net))
    c = gsn.bind_evidence(c, "Sn-ROBUST", "rmse_eval", robust)

    for sol, verdict in cfg.get("manual_reviews", {}).items():
        c = gsn.bind_evidence(c, sol, "manual", {"pass": verdict})

    gsn.save_case(c, work / "case.yaml")
    st = gsn.evaluate_status(c)
    root = gsn.root_goal(c)
    (work / "case.dot").write_text(gsn.export_dot(c, st))
    _write_json({"root": root, "statuses": st.statuses}, work / "status.json")
    for nid in sorted(st.statuses):
        click.echo(f"{nid:14s} {st.statuses[nid]}")
    click.echo(f"root goal {root}: {st[root]}")
    if st[root] not in ("Supported", "PartiallySupported"):
        raise SystemExit(1)


if __name__ == "__main__":
    main()
