from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="rotoropt",
    version="1.0.0",
    description="Topological-derivative based multi-material topology optimization of PM machine rotors",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["rotoropt", "rotoropt.*"]),
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "colorama>=0.4.6",
        "yaspin>=2.3.0",
        "numpy>=1.22",
        "scipy>=1.8",
        "matplotlib>=3.5",
        "meshio>=5.0",
    ],
    extras_require={
        "windows": ["win10toast>=0.9"],
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "rotoropt=rotoropt.cli:main",
        ],
    },
)
