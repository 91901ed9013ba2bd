import argparse
from pathlib import Path


def out_dir(default: str) -> Path:
    p = argparse.ArgumentParser()
    p.add_argument("--output-dir", default=default)
    d = Path(p.parse_args().output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d
