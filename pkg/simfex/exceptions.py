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


class SimfexError(Exception):
    """Base class for every error raised by simfex."""

    exit_code = 4


class ConfigError(SimfexError):
    """Invalid configuration or command line arguments."""

    exit_code = 2


class DataError(SimfexError, ValueError):
    """Input data that cannot be used as given."""

    exit_code = 3


class DomainError(DataError):
    """A non-positive value was handed to the Box-Cox transform or a category scheme."""


class EmptyCategoryError(DataError):
    """One or more categories received no observations.

    Args:
        categories (list): 0-based indices of the empty categories.
    """

    def __init__(self, categories, message=None):
        self.categories = list(categories)
        labels = ", ".join(f"C_{j + 1}" for j in self.categories)
        super().__init__(message or f"Empty category: {labels}")


class NumericalError(SimfexError, ArithmeticError):
    """A numerical routine failed."""

    exit_code = 4


class EstimationError(NumericalError):
    """An estimator could not produce a usable result."""
