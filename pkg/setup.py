#!/usr/bin/env python3
"""
Setup script for tubelink (online action tube generation)
"""

import subprocess
import sys
from pathlib import Path


def run_command(command, description):
    """Run a shell command and report the outcome."""
    print(f"🔄 {description}...")
    try:
        subprocess.run(command, shell=True, check=True, capture_output=True, text=True)
        print(f"✅ {description} completed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed: {e}")
        if e.stdout:
            print(f"STDOUT: {e.stdout}")
        if e.stderr:
            print(f"STDERR: {e.stderr}")
        return False


def check_prerequisites():
    """Check that Python and uv are available."""
    print("🔍 Checking prerequisites...")

    if sys.version_info < (3, 9):
        print("❌ Python 3.9+ is required")
        return False

    try:
        subprocess.run(["uv", "--version"], check=True, capture_output=True)
        print("✅ uv found")
    except (subprocess.CalledProcessError, FileNotFoundError):
        print("❌ uv not found. Please install with: curl -LsSf https://astral.sh/uv/install.sh | sh")
        return False

    return True


def setup_python_dependencies():
    print("📦 Installing Python dependencies with uv...")
    return run_command("uv sync --extra dev", "Installing dependencies with uv sync")


def create_env_file():
    """Create .env from env.example unless it already exists."""
    env_file = Path(".env")
    env_example = Path("env.example")

    if env_file.exists():
        print("✅ .env file already exists")
        return True

    if not env_example.exists():
        print("❌ env.example not found")
        return False

    try:
        env_file.write_text(env_example.read_text())
        print("✅ Created .env file from template")
        print("⚠️  Uncomment the TUBELINK_* values in .env you want to change")
        return True
    except OSError as e:
        print(f"❌ Failed to create .env file: {e}")
        return False


def main():
    print("🎬 tubelink Setup")
    print("=" * 40)

    if not check_prerequisites():
        print("\n❌ Setup failed: Prerequisites not met")
        sys.exit(1)

    if not setup_python_dependencies():
        print("\n❌ Setup failed: Python dependencies installation failed")
        sys.exit(1)

    if not create_env_file():
        print("\n❌ Setup failed: Environment file creation failed")
        sys.exit(1)

    print("\n🎉 Setup completed successfully!")
    print("\nNext steps:")
    print("1. Check the environment: uv run python test_setup.py")
    print("2. Write a synthetic scenario: uv run tubelink simulate --out data --with-flow --drop 0.1")
    print("3. Build tubes: uv run tubelink build --appearance data/appearance.jsonl --flow data/flow.jsonl --classes 3")
    print("4. Evaluate: uv run tubelink eval --gt data/gt.json --appearance data/appearance.jsonl --classes 3")
    print("\nOr run the whole workflow: uv run python demo_workflow.py")
    print("For more information, see README.md")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a setuptools build backend (e.g. `pip install`): metadata lives in pyproject.toml.
        from setuptools import setup

        setup()
    else:
        main()
