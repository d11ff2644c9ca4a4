#!/usr/bin/env python3
"""
Export the seeded simulation designs to a versioned golden-dataset directory.

Each design is written as <design>.csv (same format as `cli.py simulate`)
so sweeps and regression checks can run against fixed files.
"""

import argparse
import sys
from datetime import datetime
from pathlib import Path

import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'src'))

import datagen  # noqa: E402
import report  # noqa: E402


def export_designs(output_dir, version, description, seed):
    """
    Write every registered design to output_dir.

    Args:
        output_dir: Output directory for the dataset version
        version: Version string (e.g., "1.0")
        description: Description of this dataset version
        seed: Seed shared by all designs

    Returns:
        {design_id: row count}
    """
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    designs = {**datagen.UNIVARIATE_DESIGNS, **datagen.BIVARIATE_DESIGNS}
    row_counts = {}
    for design_id, design in sorted(designs.items()):
        if isinstance(design, datagen.UnivariateDesign):
            table = pd.DataFrame({'y': datagen.gen_univariate(design, seed)})
        else:
            polar = datagen.gen_bivariate(design, seed)
            table = pd.DataFrame({'r': polar.r, 'w1': polar.w[:, 0]})
        path = report.write_csv_table(table, output_path / f"{design_id}.csv",
                                      {'config': {'design': design_id, 'seed': seed}})
        row_counts[design_id] = len(table)
        print(f"  {design_id}: {len(table)} rows -> {path.name}")

    info_path = report.write_json(output_path / "dataset_info.json", {
        "version": version,
        "description": description,
        "created": datetime.now().isoformat(),
        "seed": seed,
        "designs": {k: designs[k].to_dict() for k in sorted(designs)},
        "rows": row_counts,
    })
    print(f"Generated dataset info at {info_path}")

    readme_path = output_path / "README.md"
    generate_readme(readme_path, version, description, seed, designs, row_counts)
    print(f"Generated README at {readme_path}")
    return row_counts


def generate_readme(output_path, version, description, seed, designs, row_counts):
    """Generate README.md for the dataset version."""
    readme_content = f"""# Golden Threshold Datasets v{version}

**Created:** {datetime.now().strftime('%Y-%m-%d')}
**Seed:** {seed}
**Description:** {description}

## Designs

"""
    for design_id in sorted(designs):
        threshold = designs[design_id].true_threshold
        readme_content += f"- **{design_id}:** {row_counts[design_id]} rows, true threshold {threshold:g}\n"

    readme_content += f"""
## Directory Structure

```
{output_path.parent.name}/
"""
    for design_id in sorted(designs):
        readme_content += f"├── {design_id}.csv\n"

    readme_content += f"""├── dataset_info.json # Design parameters and row counts
└── README.md         # This file
```

## Usage

```bash
python src/cli.py sweep \\
    --input {output_path.parent}/uni1.csv \\
    --thresholds 4:40:2 \\
    --output-dir results/uni1
```

## Version History

### v{version} ({datetime.now().strftime('%Y-%m-%d')})
- {description}
"""
    with open(output_path, 'w') as f:
        f.write(readme_content)


def main():
    parser = argparse.ArgumentParser(description="Export seeded design datasets to a versioned directory")
    parser.add_argument('--output-dir', type=str, default=None,
                        help='Output directory (default: datasets/golden/v<version>)')
    parser.add_argument('--version', type=str, required=True, help='Dataset version (e.g., "1.0")')
    parser.add_argument('--description', type=str, default='Seeded simulation designs',
                        help='Description of this dataset version')
    parser.add_argument('--seed', type=int, default=2013, help='Seed shared by all designs')
    args = parser.parse_args()
    output_dir = args.output_dir or f"datasets/golden/v{args.version}"

    print("=" * 60)
    print(f"Exporting Golden Datasets v{args.version}")
    print("=" * 60)
    print(f"Output: {output_dir}")
    print(f"Seed: {args.seed}")
    print("=" * 60)

    row_counts = export_designs(output_dir, args.version, args.description, args.seed)

    print()
    print("=" * 60)
    print("✓ Dataset export complete!")
    print("=" * 60)
    print(f"Designs: {len(row_counts)}, rows: {sum(row_counts.values())}")


if __name__ == "__main__":
    main()
