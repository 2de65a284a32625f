from setuptools import setup, find_packages
from typing import List

# declaring variables for setup function
PROJECT_NAME = "keyforge"
VERSION = "0.1.0"
AUTHOR = "MOBO"
PACKAGE_NAME = "keyforge"
DESCRIPTION = "ChaCha20 key recovery from memory extracts and SSH/TLS session decryption"
TEST_REQUIREMENTS = {"jsonschema", "cryptography", "pytest"}


def get_requirements_list() -> List[str]:
    """
    This function removes "-e ." and the test-only packages from requirements.txt
    :return: A list of libraries contained in requirements.txt
    """
    with open("requirements.txt") as requirements_file:
        requirements = [line.strip() for line in requirements_file]
    return [line for line in requirements if line and line != "-e ." and line not in TEST_REQUIREMENTS]


setup(
    name=PROJECT_NAME,
    version=VERSION,
    author=AUTHOR,
    description=DESCRIPTION,
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=get_requirements_list(),
    extras_require={"test": sorted(TEST_REQUIREMENTS)},
    entry_points={"console_scripts": ["keyforge=keyforge.app:main"]},
)
