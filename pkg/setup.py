import codecs
import os

from setuptools import find_packages, setup

from usvplanner.version import USV_PLANNER_VERSION


def long_description():
    if not (os.path.isfile("README.md") and os.access("README.md", os.R_OK)):
        return ""

    with codecs.open("README.md", encoding="utf8") as f:
        source = f.read()

        # Skip first line (assumed to have title) to reduce duplication
        return "\n".join(source.splitlines()[1:])


testing_minimal_deps = [
    "pytest>=7.4.0,<8.0.0",
    "pytest-mock>=3.10.0,<3.12.0",
]

testing_plugin_deps = [
    "pytest-cov>=4.0.0,<5.0.0",
]

testing_deps = testing_minimal_deps + testing_plugin_deps

linting_deps = [
    "isort~=5.11.0",
    "black==23.3.0",
    "ruff==0.0.267",
    "codespell[toml]==2.2.5",
    "typos>=1.32.0",
]

typing_deps = [
    "mypy~=1.8.0",
    "pandas-stubs",
    "scipy-stubs; python_version >= '3.10'",
]

helper_deps = [
    "snakeviz>=2.1.1",
]

setup(
    name="usv-planner",
    version=USV_PLANNER_VERSION,
    description=(
        "Path planning, trajectory optimization and tracking control"
        " for an under-actuated surface vessel"
    ),
    long_description=long_description(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: Implementation :: CPython",
    ],
    python_requires=">=3.8, <3.13",
    keywords="usv hybrid-astar trajectory-optimization nmpc",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={
        "usvplanner.config": ["*.ini"],
        "usvplanner.scenarios": ["*.ini"],
    },
    zip_safe=False,
    entry_points={
        "console_scripts": [
            "usv-planner = usvplanner.cli.run:main",
        ],
    },
    extras_require={
        "dev": testing_deps + linting_deps + typing_deps + helper_deps,
        "testing": testing_deps,
        "testing-minimal": testing_minimal_deps,  # extra must be hyphenated
        "linting": linting_deps,
        "typing": typing_deps,
    },
    tests_require=testing_deps,
    install_requires=[
        "numpy>=1.21,<2.0",
        "scipy>=1.7",
        "pandas>=1.3",
        "matplotlib>=3.5",
        "typing_extensions>=4.5.0",
    ],
)
