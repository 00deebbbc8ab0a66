#!/usr/bin/env python
from setuptools import setup, find_packages
from os import path

this_directory = path.abspath(path.dirname(__file__))

with open(path.join(this_directory, 'mvperiodic', '_version.py'), encoding='utf-8') as f:
    exec(f.read())

with open(path.join(this_directory, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='mvperiodic',
    version=__version__,  # noqa: F821
    description='Reproducible Monte-Carlo experiments for periodic McKean-Vlasov SDEs.',
    license='BSD',
    packages=find_packages(exclude=['test', 'test.*']),
    package_dir={'mvperiodic': 'mvperiodic'},
    # sympy builds the scenario potentials, scipy the assignment solver and fits
    install_requires=['sympy', 'numpy>=1.22', 'scipy>=1.9', 'matplotlib'],
    python_requires='>=3.11',
    entry_points={
        'console_scripts': ['mvperiodic = mvperiodic.cli:main'],
    },
    long_description=long_description,
    long_description_content_type='text/markdown',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
)
