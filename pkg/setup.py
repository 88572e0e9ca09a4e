from setuptools import setup, find_packages

setup(
    name="vtds",
    version="0.1",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"vtds": ["presets/*.yaml", "data/*.osm", "data/*.rules"]},
    install_requires=[
        "numpy",
        "matplotlib",
        "tqdm",
        "torch",
        "h5py",
        "opencv-python",
        "PyYAML",
        "shapely",
    ],
    entry_points={"console_scripts": ["vtds=vtds.cli:main"]},
    description="Deterministic synthetic urban traffic dataset generator with pixel-exact ground truth",
)
