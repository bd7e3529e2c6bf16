"""Comparison tables written by ablate and the sweeps."""
from training.serializers import ComparisonRowSerializer, render_json


def write_comparison(command, output_dir, stem, rows, table):
    """`<stem>.csv` holds the summary table, `<stem>.json` the full reports."""
    output_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_dir / f"{stem}.csv", index=False, float_format="%.6f", lineterminator="\n")
    (output_dir / f"{stem}.json").write_bytes(render_json(ComparisonRowSerializer, rows, many=True) + b"\n")
    command.stdout.write(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    command.stdout.write(f"Wrote {output_dir / (stem + '.csv')} and {output_dir / (stem + '.json')}")
