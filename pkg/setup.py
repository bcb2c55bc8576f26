from setuptools import setup, find_packages

setup(
    name="gaussian_state_prep",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.26.0",
        "psutil>=5.9.0",
        "scipy>=1.11.0",
        "setuptools>=80.8.0",
    ],
    extras_require={
        "dev": [
            "black>=25.1.0",
            "build>=1.2.2",
            "flake8>=7.2.0",
            "mypy>=1.15.0",
            "pytest>=8.0.0,<8.3.0",
            "pytest-cov>=6.1.1",
            "pytest-random-order",
            "wheel>=0.40.0,<0.46.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "gaussian-prep=gaussian_prep.cli:main",
        ],
    },
    python_requires=">=3.10",
    author="Attila Ferenc",
    author_email="attila.ferenc.dev@gmail.com",
    description="Steady-state analysis, design and simulation of continuously measured quantum Gaussian systems",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Physics",
    ],
)
