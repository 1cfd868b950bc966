__copyright__ = """

    Copyright 2024 The simfex authors

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
__license__ = "Apache 2.0"
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def spawn_seeds(seed, count):
    """Independent child seed sequences keyed by (seed, index)."""
    return np.random.SeedSequence(seed).spawn(count)


def map_ordered(func, tasks, parallelism=1):
    """
    Apply func to every task and return the results in task order.

    Runs inline for parallelism <= 1, otherwise in a process pool. func must be
    picklable (a module level function or a functools.partial of one).
    """
    tasks = list(tasks)
    if parallelism is None or parallelism <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=int(parallelism)) as executor:
        return list(executor.map(func, tasks, chunksize=max(1, len(tasks) // (4 * int(parallelism)))))
