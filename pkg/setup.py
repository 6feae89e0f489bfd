#  Copyright © Microsoft Corporation
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.


import setuptools

setuptools.setup(
    name="mayakit",
    version="0.1.0",
    description="Preprocessing, synthesis, ensembling, post-processing and scoring for Maya structure segmentation",
    packages=setuptools.find_packages('src'),
    package_dir={'': 'src'},
    package_data={'mayakit': ['schemas/*.json']},
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'jsonschema',
        'coloredlogs==10.0',
        'joblib==1.2.0',
        'scikit-learn>=1.0'
    ],
    extras_require={
        'test': ['pytest', 'tifffile']
    },
    entry_points={
        'console_scripts': ['mayakit=mayakit.cli:main']
    }
)
