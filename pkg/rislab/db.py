from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

from .config import database_url

_engines: dict[str, Engine] = {}


class Base(DeclarativeBase):
    pass


def get_engine(url: str | None = None) -> Engine:
    url = url or database_url()
    if url not in _engines:
        from . import models  # noqa: F401  registers the tables

        connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
        engine = create_engine(url, connect_args=connect_args)
        Base.metadata.create_all(bind=engine)
        _engines[url] = engine
    return _engines[url]


def SessionLocal(url: str | None = None) -> Session:
    return sessionmaker(bind=get_engine(url), autocommit=False, autoflush=False)()
