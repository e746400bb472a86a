#!/usr/bin/env python3
"""Setup script for linspec-vocoder."""

from setuptools import setup, find_packages
from pathlib import Path

# Read version from package
version = {}
with open("linspec_vocoder/__init__.py") as f:
    exec(f.read(), version)

# Read long description from README
readme = Path("README.md").read_text(encoding="utf-8")

# Read requirements
requirements = Path("linspec_vocoder/requirements.txt").read_text().strip().split("\n")

setup(
    name="linspec-vocoder",
    version=version["__version__"],
    description="Mel to full-bandwidth linear spectrogram estimation by diffusion, Vocos2D vocoding and spectrogram realism evaluation",
    long_description=readme,
    long_description_content_type="text/markdown",
    license="MIT",
    packages=find_packages(exclude=["tests", "tests.*"]),
    include_package_data=True,
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "test": ["pytest>=7.4.0", "hypothesis>=6.80.0"],
    },
    entry_points={
        "console_scripts": [
            "linspec-vocoder=linspec_vocoder.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Multimedia :: Sound/Audio :: Sound Synthesis",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    keywords="vocoder diffusion spectrogram bandwidth-extension singing-voice gan",
)
