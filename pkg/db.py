"""
Database store for built growth levels (PostgreSQL, or any sqlalchemy URL)
"""
import logging
from datetime import datetime
from typing import List, Optional, Sequence

from sqlalchemy import JSON, Column, DateTime, Index, Integer, LargeBinary, String, create_engine
from sqlalchemy.dialects.postgresql import JSONB
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from causet import Causet, OffspringKind
from growth import GrowthError, GrowthLevel
from settings import DATABASE_URL

# Setup logging
logger = logging.getLogger(__name__)

# Create base class for declarative models
Base = declarative_base()

CoverList = JSON().with_variant(JSONB(), "postgresql")


class CausetRow(Base):
    """One causet of a level, at its position in canonical order"""
    __tablename__ = 'causets'

    level = Column(Integer, primary_key=True)
    position = Column(Integer, primary_key=True)
    code = Column(LargeBinary, nullable=False)
    covers = Column(CoverList)  # cover edges, for inspection from SQL
    created_at = Column(DateTime, default=datetime.utcnow)

    __table_args__ = (Index('idx_causet_code', 'code'),)


class TransitionRow(Base):
    """x -> y between consecutive levels with its multiplicity"""
    __tablename__ = 'transitions'

    level = Column(Integer, primary_key=True)  # level of the child
    parent = Column(Integer, primary_key=True)
    child = Column(Integer, primary_key=True)
    multiplicity = Column(Integer, nullable=False)
    kind = Column(String(10), nullable=False)


class DatabaseManager:
    """Database manager for the level cache"""

    def __init__(self, database_url: str = None):
        self.database_url = database_url or DATABASE_URL

        if not self.database_url:
            logger.warning("DATABASE_URL not set. Database operations will fail.")
            self.engine = None
            self.SessionLocal = None
            return

        try:
            if self.database_url.startswith("postgresql"):
                self.engine = create_engine(
                    self.database_url,
                    pool_size=5,
                    max_overflow=10,
                    pool_pre_ping=True,  # Verify connections before using
                    pool_recycle=3600,
                    connect_args={'connect_timeout': 60},
                    echo=False
                )
            else:
                self.engine = create_engine(self.database_url, echo=False)
            self.SessionLocal = sessionmaker(bind=self.engine)
            logger.info("Database connection established")
        except Exception as e:
            logger.error(f"Failed to connect to database: {e}")
            self.engine = None
            self.SessionLocal = None

    def create_tables(self):
        """Create all tables if they don't exist"""
        if self.engine:
            Base.metadata.create_all(self.engine)
            logger.info("Database tables created/verified")

    def get_session(self) -> Session:
        if not self.SessionLocal:
            raise RuntimeError("Database not initialized")
        return self.SessionLocal()

    def stored_depth(self) -> int:
        """Highest level present, 0 for an empty store"""
        try:
            session = self.get_session()
            depth = session.query(CausetRow.level).order_by(CausetRow.level.desc()).first()
            session.close()
            return depth[0] if depth else 0
        except Exception as e:
            logger.error(f"Error reading stored depth: {e}")
            return 0

    def save_levels(self, levels: Sequence[GrowthLevel]) -> bool:
        """Store levels that are not stored yet"""
        session = None
        try:
            session = self.get_session()
            known = {row[0] for row in session.query(CausetRow.level).distinct()}
            added = 0
            for level in levels:
                if level.n in known:
                    continue
                session.add_all(
                    CausetRow(level=level.n, position=i, code=c.canonical_code, covers=[list(e) for e in c.covers])
                    for i, c in enumerate(level.causets)
                )
                session.add_all(
                    TransitionRow(level=level.n, parent=p, child=c, multiplicity=m, kind=level.kinds[(p, c)].value)
                    for (p, c), m in sorted(level.transitions.items())
                )
                added += 1
            session.commit()
            session.close()
            logger.info(f"Stored {added} new levels")
            return True

        except Exception as e:
            logger.error(f"Error storing levels: {e}")
            if session is not None:
                session.rollback()
                session.close()
            return False

    def load_levels(self, max_n: int) -> Optional[List[GrowthLevel]]:
        """Levels 1..min(max_n, stored depth), or None when nothing usable is stored"""
        try:
            session = self.get_session()
            causets = (
                session.query(CausetRow)
                .filter(CausetRow.level <= max_n)
                .order_by(CausetRow.level, CausetRow.position)
                .all()
            )
            transitions = session.query(TransitionRow).filter(TransitionRow.level <= max_n).all()
            session.close()
        except Exception as e:
            logger.error(f"Error loading levels: {e}")
            return None

        by_level = {}
        for row in causets:
            by_level.setdefault(row.level, []).append(bytes(row.code))
        moves = {}
        for row in transitions:
            moves.setdefault(row.level, []).append(row)

        levels = []
        for n in range(1, max_n + 1):
            if n not in by_level:
                break
            codes = by_level[n]
            if codes != sorted(codes) or any(code[0] != n for code in codes):
                raise GrowthError(f"stored level {n} is not in canonical order")
            levels.append(
                GrowthLevel(
                    n,
                    tuple(Causet.from_code(code) for code in codes),
                    {(t.parent, t.child): t.multiplicity for t in moves.get(n, [])},
                    {(t.parent, t.child): OffspringKind(t.kind) for t in moves.get(n, [])},
                )
            )
        return levels or None

    def clear(self) -> bool:
        session = None
        try:
            session = self.get_session()
            session.query(TransitionRow).delete()
            session.query(CausetRow).delete()
            session.commit()
            session.close()
            return True
        except Exception as e:
            logger.error(f"Error clearing level store: {e}")
            if session is not None:
                session.rollback()
                session.close()
            return False


# Singleton instance
_db_manager = None

def get_db_manager() -> DatabaseManager:
    """Get or create database manager singleton"""
    global _db_manager
    if _db_manager is None:
        _db_manager = DatabaseManager()
        if _db_manager.engine:
            _db_manager.create_tables()
    return _db_manager
