#!/usr/bin/env python3
"""
Setup script for the vacuum INS harness

Installs requirements.txt, checks the numerical stack, creates ~/.ins_harness
(or $INS_HARNESS_HOME) and imports every harness module.
"""

import importlib
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).parent
HARNESS_MODULES = ['config', 'fields', 'solver', 'scenarios', 'diagnostics', 'inequalities',
                   'lagrangian', 'twisted_div', 'scenario_config', 'ins_harness', 'report_workbook']
MIN_VERSIONS = {'numpy': (1, 24), 'scipy': (1, 12), 'openpyxl': (3, 1)}


def _version_tuple(text):
    parts = []
    for piece in text.split('.')[:2]:
        digits = ''.join(ch for ch in piece if ch.isdigit())
        parts.append(int(digits or 0))
    return tuple(parts)


def check_python():
    """tomllib needs Python 3.11+"""
    version = sys.version_info
    if version < (3, 11):
        print(f"✗ Python 3.11+ is required, found {version.major}.{version.minor}")
        return False
    print(f"✓ Python {version.major}.{version.minor}.{version.micro}")
    return True


def install_requirements():
    """pip install -r requirements.txt with the running interpreter"""
    command = [sys.executable, '-m', 'pip', 'install', '-r', str(ROOT / 'requirements.txt')]
    print(f"\nInstalling requirements ({' '.join(command[2:])})...")
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode != 0:
        print(f"✗ pip exited with code {result.returncode}")
        print(result.stderr or result.stdout)
        return False
    print("✓ Requirements installed")
    return True


def check_numerical_stack():
    """Minimum versions: scipy 1.12 for cg(rtol=...) and grid-wrap splines"""
    ok = True
    for name, minimum in MIN_VERSIONS.items():
        try:
            module = importlib.import_module(name)
        except ImportError as e:
            print(f"✗ {name} is missing: {e}")
            ok = False
            continue
        found = _version_tuple(module.__version__)
        mark = '✓' if found >= minimum else '✗'
        print(f"{mark} {name} {module.__version__} (need >= {'.'.join(map(str, minimum))})")
        ok = ok and found >= minimum
    return ok


def prepare_directories():
    sys.path.insert(0, str(ROOT))
    try:
        from config import HARNESS_HOME, ensure_directories
        ensure_directories()
    except Exception as e:
        print(f"✗ Could not create the harness directories: {e}")
        return False
    print(f"✓ Output and log directories under {HARNESS_HOME}")
    return True


def import_modules():
    failed = []
    for name in HARNESS_MODULES:
        try:
            importlib.import_module(name)
        except Exception as e:
            failed.append(f"{name} ({e})")
    if failed:
        print(f"✗ Import failures: {', '.join(failed)}")
        return False
    print(f"✓ Imported {len(HARNESS_MODULES)} harness modules")
    return True


STEPS = [
    ("Python version", check_python),
    ("Dependencies", install_requirements),
    ("Numerical stack", check_numerical_stack),
    ("Directories", prepare_directories),
    ("Module imports", import_modules),
]


def main():
    print("=" * 60)
    print("Vacuum INS Harness Setup")
    print("=" * 60)

    for title, action in STEPS:
        print(f"\n[{title}]")
        if not action():
            print(f"\n❌ Setup stopped at step: {title}")
            sys.exit(1)

    print("\n" + "=" * 60)
    print("🎉 Setup completed successfully!")
    print("=" * 60)
    print("\nNext steps:")
    print("1. Smoke-test the components: python test_system.py")
    print("2. Run the test suite: python -m pytest")
    print("3. Run a scenario: python ins_harness.py run scenarios/taylor_green.toml")
    print("4. Summarize a run: python ins_harness.py report <output directory>")


if __name__ == "__main__":
    main()
