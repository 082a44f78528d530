from setuptools import find_packages
from setuptools import setup


setup(
    name='panoscan',
    description=(
        'Reinforcement-learned viewport scanpaths for blind quality '
        'assessment of 360-degree panoramas.'
    ),
    version='0.1.0',
    classifiers=[
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
    ],
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.22',
        'opencv-python-headless',
        'Pillow',
        'PyYAML',
        'scipy>=1.8',
    ],
    packages=find_packages(exclude=('tests*',)),
    entry_points={
        'console_scripts': [
            'panoscan = panoscan.cli:main',
        ],
    },
)
