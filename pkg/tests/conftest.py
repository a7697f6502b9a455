import pytest

from helpers import (
    car1_schema as _car1,
    make_school_db,
    stadium_schema as _stadium,
)

from sketchsql.execution import Database


@pytest.fixture
def school_db_path(tmp_path):
    return make_school_db(tmp_path / "school.sqlite")


@pytest.fixture
def school_db(school_db_path):
    return Database(school_db_path)


@pytest.fixture
def school_schema(school_db):
    return school_db.schema


@pytest.fixture
def car1():
    return _car1()


@pytest.fixture
def stadium():
    return _stadium()
