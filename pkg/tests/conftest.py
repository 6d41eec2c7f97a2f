import os

from hypothesis import settings

# derandomized so that repeated test runs draw the same examples
settings.register_profile("repo", derandomize=True, deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))
