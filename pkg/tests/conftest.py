import pytest

from dbsfm.spectral import WelchConfig
from dbsfm.synth import default_cohort
from dbsfm.tokens import tokenize


@pytest.fixture(scope="session")
def mini_cohort_sequences():
    """3 subjects, 6 hours each (12 sequences per subject), tokenized."""
    cohort = default_cohort(n_subjects=3, days=0.25, master_seed=424242)
    cfg = WelchConfig()
    return {
        sid: tokenize(cohort.recording(sid), cohort.labels(sid), cfg)
        for sid in cohort.subject_ids
    }
