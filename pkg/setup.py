from setuptools import setup, find_packages

from face_proposals import __version__

with open("README.md") as f:
    readme = f.read()

with open("requirements.txt") as f:
    required = f.read().splitlines()

setup(
    name="face_proposals",
    version=__version__,
    description="Face proposals from face and facial part heatmaps over a sparse image pyramid.",
    long_description=readme,
    long_description_content_type="text/markdown",
    keywords=[
        "face detection",
        "image pyramid",
        "heatmaps",
        "fully convolutional network",
    ],
    license="MIT",
    entry_points={"console_scripts": ["face_proposals=face_proposals.__main__:face_proposals_cli"]},
    install_requires=required,
    python_requires=">=3.10",
    packages=find_packages(exclude=("tests", "examples")),
    package_data={"face_proposals": ["templates/*.j2"]},
    include_package_data=True,
    zip_safe=False,
)
