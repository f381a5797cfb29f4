import pytest

import db
import growth
from db import DatabaseManager


@pytest.fixture
def manager(tmp_path):
    m = DatabaseManager(f"sqlite:///{tmp_path / 'levels.db'}")
    m.create_tables()
    return m


def test_store_and_load_levels(manager, levels):
    assert manager.stored_depth() == 0
    assert manager.load_levels(3) is None
    assert manager.save_levels(levels[:3])
    assert manager.stored_depth() == 3

    loaded = manager.load_levels(5)
    assert len(loaded) == 3
    assert [level.causets for level in loaded] == [level.causets for level in levels[:3]]
    assert loaded[2].transitions == levels[2].transitions
    assert loaded[2].kinds == levels[2].kinds


def test_saving_skips_stored_levels(manager, levels):
    assert manager.save_levels(levels[:2])
    assert manager.save_levels(levels[:4])
    assert manager.stored_depth() == 4
    assert len(manager.load_levels(4)[1].causets) == 2


def test_clear(manager, levels):
    manager.save_levels(levels[:2])
    assert manager.clear()
    assert manager.stored_depth() == 0


def test_missing_url_leaves_no_engine(monkeypatch):
    monkeypatch.setattr(db, "DATABASE_URL", None)
    m = DatabaseManager()
    assert m.engine is None
    with pytest.raises(RuntimeError):
        m.get_session()
    assert m.stored_depth() == 0
    assert not m.save_levels([])
    assert m.load_levels(2) is None


def test_load_levels_prefers_the_database(manager, levels, monkeypatch, tmp_path):
    monkeypatch.setattr(growth, "USE_DATABASE", True)
    monkeypatch.setattr(db, "get_db_manager", lambda: manager)
    path = str(tmp_path / "unused.json")

    built = growth.load_levels(3, path=path)
    assert len(built) == 3
    assert manager.stored_depth() == 3
    assert not (tmp_path / "unused.json").exists()

    def fail(*args, **kwargs):
        raise AssertionError("levels should come from the database")

    monkeypatch.setattr(growth, "build_levels", fail)
    assert [len(level.causets) for level in growth.load_levels(2, path=path)] == [1, 2]
