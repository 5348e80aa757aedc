from setuptools import setup

with open("README.md") as f:
    long_description = f.read()

setup(
    name="dfc2bp",
    version="0.1.0",
    packages=["dfc2bp"],
    license="MIT",
    description="Behavior primitives from the sensorimotor dynamic functional "
    "connectivity of a simulated babbling agent",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering",
    ],
    keywords="mutual information relational model matrix factorization robotics",
    install_requires=[
        "rich-argparse==1.0.0",
        "rich==13.0.1",
        "PyYAML==6.0.1",
        "numpy>=1.22",
        "scipy>=1.8",
    ],
    python_requires=">=3.8",
    entry_points={"console_scripts": ["dfc2bp=dfc2bp.__main__:main"]},
)
