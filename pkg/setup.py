# MIT License
# Copyright (c) 2024 The semples authors

import os
import re
import sys

from setuptools import setup

vi = sys.version_info
if vi < (3, 8):
    raise RuntimeError("semples requires Python 3.8 or greater")

install_requires = [
    "torch>=1.13",
    "numpy>=1.22",
    "Pillow>=9.0",
    "matplotlib>=3.6",
    "mmh3>=3.0",
]

clip_requires = [
    "open_clip_torch>=2.20",
]

dev_requires = [
    "pytest==7.4.4",
    "pytest-mock==3.12.0",
    "pytest-asyncio==0.21.1",
    "pytest-cov==4.1.0",
    "black==24.3.0",
    "isort==5.13.2",
    "flake8==6.1.0",
]


def get_version():
    with open(os.path.join(os.path.abspath(os.path.dirname(__file__)), "semples/version.py")) as fp:
        try:
            return re.findall(r"^__version__ = \"([^']+)\"\r?$", fp.read(), re.M)[0]
        except IndexError:
            raise RuntimeError("Unable to determine version.")


with open(os.path.join(os.path.dirname(__file__), "README.rst")) as f:
    readme = f.read()

setup(
    version=get_version(),
    name="semples",
    description="Weakly supervised semantic segmentation lab with learned background prompts",
    long_description=readme,
    author="The semples authors",
    platforms=["*nix"],
    packages=["semples"],
    install_requires=install_requires,
    extras_require={"clip": clip_requires, "dev": dev_requires},
    entry_points={"console_scripts": ["semples = semples.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
