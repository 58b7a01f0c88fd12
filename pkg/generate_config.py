#!/usr/bin/env python3
"""
Generate the bundled experiment configurations

This script writes one JSON file per preset:
- configs/default.json (nonlinear diagonal problem, backtracking lambda)
- configs/deconv.json  (Gaussian deconvolution, tuned step constants)

Usage:
    python generate_config.py

Each file is the full merged document, so every key can be edited in place.
Run an experiment afterwards with:
    python app.py run configs/default.json
"""

from pathlib import Path

from twopoint.config import CONFIG_DIR, PRESETS, ConfigManager


def generate_configs(config_dir=CONFIG_DIR):
    """Write every preset to ``config_dir``, asking before overwriting"""
    config_dir = Path(config_dir)
    config_dir.mkdir(exist_ok=True)

    written = []
    for preset in sorted(PRESETS):
        config_file = config_dir / f"{preset}.json"
        if config_file.exists():
            try:
                response = input(f"{config_file} already exists. Regenerate? (y/N): ")
                if response.lower() != "y":
                    print(f"Keeping {config_file}.")
                    continue
            except (EOFError, KeyboardInterrupt):
                print("\nOperation cancelled.")
                return written
            config_file.unlink()

        manager = ConfigManager(config_file, preset=preset)
        problem = manager.get("problem", "kind")
        strategy = manager.get("solver", "lambda_strategy")
        print(f"   {config_file}: {problem} problem, {strategy} lambda")
        written.append(config_file)
    return written


if __name__ == "__main__":
    print("Experiment Configuration Generator")
    print("=" * 50)

    try:
        files = generate_configs()
    except KeyboardInterrupt:
        print("\n\nConfiguration generation cancelled by user.")
    except Exception as e:
        print(f"Unexpected error: {e}")
    else:
        print(f"Wrote {len(files)} configuration file(s).")
        print("   python app.py run configs/default.json")
