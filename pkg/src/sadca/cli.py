"""Command-line harness: attack, eval, gradcheck, ablations, sweeps.

Config files are JSON objects whose keys mirror AttackConfig field names;
CLI flags (--seed, --set field=value) override file values. The env var
SADCA_NUM_WORKERS (default 1) caps sample-level parallelism.
"""

from __future__ import annotations

import itertools
import json
import sys
from dataclasses import fields
from pathlib import Path

import click
import numpy as np

from .attack import AttackConfig, pgd_baseline
from .data import Dataset, load_manifest, render_tokens, save_image_png
from .encoders import EncoderParams, init_toy_encoders
from .errors import SadcaError
from .evaluation import (
    attack_dataset,
    evaluate_attack,
    format_report_table,
    per_sample_record,
    results_json,
    transfer_matrix,
)
from .gradcheck import run_suite, suite_passed
from .sampling import STRATEGIES
from .toydata import make_toy_dataset, write_toy_workspace


def _parse_encoder_spec(spec: str, dataset: Dataset) -> EncoderParams:
    try:
        seed, hidden, dim = (int(x) for x in spec.split(":"))
    except ValueError as exc:
        raise click.UsageError(
            f"encoder spec must be seed:hidden:dim, got {spec!r}"
        ) from exc
    shape = tuple(dataset.samples[0].image.shape)
    return init_toy_encoders(seed=seed, image_shape=shape,
                             vocab_size=len(dataset.vocab), hidden=hidden, embed_dim=dim)


def _parse_encoder_list(specs: str, dataset: Dataset) -> list[EncoderParams]:
    return [_parse_encoder_spec(s.strip(), dataset) for s in specs.split(",") if s.strip()]


_FIELD_TYPES = {f.name: f.type for f in fields(AttackConfig)}


def _coerce(field: str, raw: str):
    if field not in _FIELD_TYPES:
        raise click.UsageError(f"unknown config field {field!r}")
    ftype = _FIELD_TYPES[field]
    if ftype == "bool":
        return raw.lower() in ("1", "true", "yes", "on")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def _load_config(config_path: str | None, seed: int | None, sets: tuple[str, ...]) -> AttackConfig:
    cfg = AttackConfig.from_json(config_path) if config_path else AttackConfig()
    overrides = {}
    for item in sets:
        if "=" not in item:
            raise click.UsageError(f"--set expects field=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key] = _coerce(key, raw)
    if seed is not None:
        overrides["seed"] = seed
    return cfg.with_overrides(**overrides) if overrides else cfg


def _load_dataset(manifest: str, lexicon: str | None) -> Dataset:
    return load_manifest(manifest, lexicon_path=lexicon)


def _write_artifacts(out: Path, dataset: Dataset, results, save_raw: bool) -> None:
    adv_dir = out / "adv"
    adv_dir.mkdir(parents=True, exist_ok=True)
    for sid in sorted(results):
        r = results[sid]
        save_image_png(r.adv_image, adv_dir / f"{sid}.png")
        captions = [render_tokens(dataset.vocab, c.tokens) for c in r.adv_captions]
        (adv_dir / f"{sid}.txt").write_text("\n".join(captions) + "\n")
        if save_raw:
            np.save(adv_dir / f"{sid}.npy", r.adv_image.detach().numpy())


manifest_opt = click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
lexicon_opt = click.option("--lexicon", default=None, type=click.Path(exists=True, dir_okay=False))
config_opt = click.option("--config", "config_path", default=None,
                          type=click.Path(exists=True, dir_okay=False))
out_opt = click.option("--out", required=True, type=click.Path(file_okay=False))
seed_opt = click.option("--seed", default=None, type=int, help="Override the config seed.")
set_opt = click.option("--set", "sets", multiple=True, metavar="FIELD=VALUE",
                       help="Override any config field.")
attack_opt = click.option("--attack", "attack_kind", default="sadca",
                          type=click.Choice(["sadca", "pgd"]))
asr_opt = click.option("--asr-denominator", "asr_mode", default="correct_before",
                       type=click.Choice(["correct_before", "all"]))


@click.group()
def main() -> None:
    """Contrastive multimodal attack harness for toy dual-encoder retrieval."""


@main.command("attack")
@manifest_opt
@lexicon_opt
@config_opt
@out_opt
@seed_opt
@set_opt
@attack_opt
@click.option("--encoder", default="1:32:16", show_default=True,
              help="Surrogate encoder as seed:hidden:dim.")
@click.option("--save-raw", is_flag=True,
              help="Also persist unquantized float64 pixel arrays for budget audits.")
def attack_cmd(manifest, lexicon, config_path, out, seed, sets, attack_kind, encoder, save_raw):
    """Attack every manifest sample and write adversarial artifacts."""
    config = _load_config(config_path, seed, sets)
    dataset = _load_dataset(manifest, lexicon)
    params = _parse_encoder_spec(encoder, dataset)
    results = attack_dataset(dataset, config, params, attack=attack_kind)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_artifacts(out, dataset, results, save_raw)
    per_sample = [per_sample_record(dataset, results[sid], params.label)
                  for sid in sorted(results)]
    (out / "results.json").write_text(results_json(config, per_sample, []))
    ok = sum(1 for r in results.values() if r.budget_ok)
    click.echo(f"attacked {len(results)} samples with {attack_kind} "
               f"({ok}/{len(results)} within budget); artifacts in {out}")


@main.command("eval")
@manifest_opt
@lexicon_opt
@config_opt
@out_opt
@seed_opt
@set_opt
@attack_opt
@asr_opt
@click.option("--surrogates", default="1:32:16", show_default=True)
@click.option("--targets", default="2:24:16", show_default=True)
def eval_cmd(manifest, lexicon, config_path, out, seed, sets, attack_kind, asr_mode,
             surrogates, targets):
    """Run the surrogate->target transfer matrix and write report + table."""
    config = _load_config(config_path, seed, sets)
    dataset = _load_dataset(manifest, lexicon)
    surrogate_params = _parse_encoder_list(surrogates, dataset)
    target_params = _parse_encoder_list(targets, dataset)
    reports, all_results = transfer_matrix(
        surrogate_params, target_params, dataset, config,
        attack=attack_kind, asr_mode=asr_mode,
    )
    per_sample = []
    for label in sorted(all_results):
        for sid in sorted(all_results[label]):
            per_sample.append(per_sample_record(dataset, all_results[label][sid], label))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(results_json(config, per_sample, reports))
    table = format_report_table(reports)
    (out / "table.txt").write_text(table)
    click.echo(table, nl=False)


@main.command("gradcheck")
@click.option("--seed", default=0, type=int, show_default=True)
def gradcheck_cmd(seed):
    """Run the finite-difference gradient suite; nonzero exit on failure."""
    cases = run_suite(seed=seed)
    for c in cases:
        status = "ok" if c.ok else "FAIL"
        click.echo(f"{status:4s} {c.name}: {c.agree_fraction * 100:.1f}% of "
                   f"{c.num_coords} coords within rel {c.rel_tol:g}")
    if not suite_passed(cases):
        sys.exit(1)


@main.command("ablate-negatives")
@manifest_opt
@lexicon_opt
@config_opt
@out_opt
@seed_opt
@set_opt
@asr_opt
@click.option("--encoder", default="1:32:16", show_default=True)
def ablate_negatives_cmd(manifest, lexicon, config_path, out, seed, sets, asr_mode, encoder):
    """Compare the four negative-selection strategies at fixed config."""
    config = _load_config(config_path, seed, sets)
    dataset = _load_dataset(manifest, lexicon)
    params = _parse_encoder_spec(encoder, dataset)
    rows = []
    for strategy in STRATEGIES:
        cfg = config.with_overrides(strategy=strategy)
        results = attack_dataset(dataset, cfg, params)
        report = evaluate_attack(dataset, results, params.label, params, asr_mode=asr_mode)
        rows.append({"strategy": strategy, "report": report.to_dict()})
        click.echo(f"{strategy:14s} TR@1={report.tr_asr[1]:6.2f}  IR@1={report.ir_asr[1]:6.2f}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "negatives.json").write_text(
        json.dumps({"config": config.to_dict(), "rows": rows}, sort_keys=True, indent=2) + "\n"
    )


@main.command("ablate-modules")
@manifest_opt
@lexicon_opt
@config_opt
@out_opt
@seed_opt
@set_opt
@asr_opt
@click.option("--encoder", default="1:32:16", show_default=True)
def ablate_modules_cmd(manifest, lexicon, config_path, out, seed, sets, asr_mode, encoder):
    """Toggle grid over alignment / dynamic text / augmentation, plus a PGD row."""
    config = _load_config(config_path, seed, sets)
    dataset = _load_dataset(manifest, lexicon)
    params = _parse_encoder_spec(encoder, dataset)
    rows = []

    def row_from(label: str, results, toggles: dict) -> dict:
        report = evaluate_attack(dataset, results, params.label, params, asr_mode=asr_mode)
        per_sample = []
        for sid in sorted(results):
            rec = per_sample_record(dataset, results[sid], params.label)
            del rec["losses"]  # digests + budget flags identify a row's outputs
            per_sample.append(rec)
        return {"label": label, **toggles, "report": report.to_dict(),
                "per_sample": per_sample}

    for ci, di, sa in itertools.product((False, True), repeat=3):
        cfg = config.with_overrides(enable_ci=ci, enable_di=di, enable_sa=sa)
        results = attack_dataset(dataset, cfg, params)
        label = f"ci={int(ci)},di={int(di)},sa={int(sa)}"
        rows.append(row_from(label, results,
                             {"enable_ci": ci, "enable_di": di, "enable_sa": sa}))
        click.echo(f"{label}: TR@1={rows[-1]['report']['tr_asr']['1']:6.2f}")

    baseline_results = {
        s.id: pgd_baseline(s, config, params)
        for s in sorted(dataset.samples, key=lambda s: s.id)
    }
    rows.append(row_from("pgd_baseline", baseline_results, {}))
    click.echo(f"pgd_baseline: TR@1={rows[-1]['report']['tr_asr']['1']:6.2f}")

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "modules.json").write_text(
        json.dumps({"config": config.to_dict(), "rows": rows}, sort_keys=True, indent=2) + "\n"
    )


_SWEEP_FIELDS = {"I": "interactions", "S": "num_views", "K": "num_negatives",
                 "lambda": "neg_weight"}


@main.command("sweep")
@manifest_opt
@lexicon_opt
@config_opt
@out_opt
@seed_opt
@set_opt
@asr_opt
@click.option("--param", "param", required=True, type=click.Choice(sorted(_SWEEP_FIELDS)))
@click.option("--values", required=True, help="Comma-separated values for the parameter.")
@click.option("--surrogates", default="1:32:16", show_default=True)
@click.option("--targets", default="2:24:16", show_default=True)
def sweep_cmd(manifest, lexicon, config_path, out, seed, sets, asr_mode, param, values,
              surrogates, targets):
    """Grid over one of I / S / K / lambda, scoring white-box and transfer ASR."""
    config = _load_config(config_path, seed, sets)
    dataset = _load_dataset(manifest, lexicon)
    surrogate_params = _parse_encoder_list(surrogates, dataset)
    target_params = _parse_encoder_list(targets, dataset)
    field = _SWEEP_FIELDS[param]
    parse = float if field == "neg_weight" else int

    rows = []
    for raw in values.split(","):
        value = parse(raw.strip())
        cfg = config.with_overrides(**{field: value})
        reports, _ = transfer_matrix(surrogate_params, target_params, dataset, cfg,
                                     asr_mode=asr_mode)
        rows.append({"value": value, "reports": [r.to_dict() for r in reports]})
        mean_tr = float(np.mean([r.tr_asr[1] for r in reports]))
        click.echo(f"{param}={value}: mean TR@1={mean_tr:6.2f}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(
        json.dumps({"config": config.to_dict(), "param": param, "rows": rows},
                   sort_keys=True, indent=2) + "\n"
    )


@main.command("make-toy")
@out_opt
@click.option("--samples", default=16, show_default=True, type=int)
@click.option("--captions", default=3, show_default=True, type=int)
@click.option("--shape", default="16x16x1", show_default=True,
              help="Image shape as HxWxC.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--encoders", default="1:32:16,2:24:16", show_default=True,
              help="Encoders (seed:hidden:dim,...) the images are aligned under.")
def make_toy_cmd(out, samples, captions, shape, seed, encoders):
    """Generate a deterministic toy workspace (manifest, PNGs, lexicon, config)."""
    try:
        h, w, c = (int(x) for x in shape.lower().split("x"))
    except ValueError as exc:
        raise click.UsageError(f"--shape must be HxWxC, got {shape!r}") from exc
    from .toydata import toy_vocabulary

    vocab = toy_vocabulary()
    encoder_params = []
    for spec in encoders.split(","):
        s, hid, d = (int(x) for x in spec.strip().split(":"))
        encoder_params.append(init_toy_encoders(s, (h, w, c), len(vocab), hid, d))
    dataset = make_toy_dataset(
        num_samples=samples, image_shape=(h, w, c), captions_per_sample=captions,
        seed=seed, encoders=encoder_params,
    )
    paths = write_toy_workspace(Path(out), dataset, config=AttackConfig(seed=seed))
    click.echo(f"wrote {len(dataset)} samples under {out} "
               f"({', '.join(sorted(p.name for p in paths.values()))})")


def run_cli(argv: list[str]) -> int:
    """Programmatic entry point returning the exit code.

    Usage problems (unknown flags or subcommands) exit 2; runtime failures
    exit 1 with a diagnostic on stderr.
    """
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # e.g. --help
        return int(exc.exit_code)
    except click.ClickException as exc:  # UsageError carries exit_code 2
        exc.show()
        return int(exc.exit_code)
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    except (SadcaError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


def cli_entry() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    cli_entry()
