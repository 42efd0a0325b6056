import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from milepost.fixtures import default_fixture_dir, load_default_fixtures


@pytest.fixture(scope="session")
def fixtures():
    return load_default_fixtures()


@pytest.fixture(scope="session")
def persona_dir():
    return default_fixture_dir() / "personas"


@pytest.fixture()
def engine(fixtures):
    from milepost.engine import DialogueEngine

    return DialogueEngine(fixtures)


@pytest.fixture()
def profile():
    from milepost.model import (
        EducationLevel,
        ExternalKind,
        LanguageProficiency,
        RegistrationFact,
        UserProfile,
    )

    return UserProfile(
        user_id="tester",
        education_level=EducationLevel.INTERMEDIATE,
        language_proficiency=LanguageProficiency.MEDIUM,
        registration_facts=(
            RegistrationFact(
                kind=ExternalKind.USER_STATE,
                description="work authorization",
                resolved=True,
            ),
        ),
    )
