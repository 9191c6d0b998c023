# repository.py
import csv
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable, Sequence, Union

from pydantic import ValidationError

from block_assembly import FeedbackPolicy
from errors import ArtifactIOError
from models import PolicyDocument
from monte_carlo import McReport
from scp_driver import ScpIterationRecord

logger = logging.getLogger(__name__)


class PolicyRepository(ABC):
    @abstractmethod
    def save_policy(self, policy: FeedbackPolicy, name: str = "policy.json") -> Path:
        pass

    @abstractmethod
    def load_policy(self, path: Union[str, Path]) -> FeedbackPolicy:
        pass


class ReportRepository(ABC):
    @abstractmethod
    def save_iterations(self, records: Sequence[ScpIterationRecord], name: str = "iterations.jsonl") -> Path:
        pass

    @abstractmethod
    def save_report(self, report: McReport, name: str = "report.json") -> Path:
        pass

    @abstractmethod
    def load_report(self, path: Union[str, Path]) -> McReport:
        pass

    @abstractmethod
    def save_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        pass

    @abstractmethod
    def save_text(self, name: str, text: str) -> Path:
        pass


class FileArtifactRepository(PolicyRepository, ReportRepository):
    """Stores every artifact as a file under one output directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def path_for(self, name: str) -> Path:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactIOError(f"Cannot create output directory {self.directory}: {e}") from e
        return self.directory / name

    def _write(self, name: str, text: str) -> Path:
        path = self.path_for(name)
        try:
            path.write_text(text)
        except OSError as e:
            raise ArtifactIOError(f"Cannot write {path}: {e}") from e
        logger.info("Wrote %s", path)
        return path

    @staticmethod
    def _read(path: Union[str, Path]) -> str:
        try:
            return Path(path).read_text()
        except OSError as e:
            raise ArtifactIOError(f"Cannot read {path}: {e}") from e

    def save_policy(self, policy: FeedbackPolicy, name: str = "policy.json") -> Path:
        return self._write(name, PolicyDocument.from_policy(policy).model_dump_json(indent=2))

    def load_policy(self, path: Union[str, Path]) -> FeedbackPolicy:
        try:
            document = PolicyDocument.model_validate_json(self._read(path))
            return document.to_policy()
        except (ValidationError, ValueError) as e:
            raise ArtifactIOError(f"Malformed policy file {path}: {e}") from e

    def save_iterations(self, records: Sequence[ScpIterationRecord], name: str = "iterations.jsonl") -> Path:
        return self._write(name, "".join(record.model_dump_json() + "\n" for record in records))

    def save_report(self, report: McReport, name: str = "report.json") -> Path:
        return self._write(name, report.model_dump_json(indent=2))

    def load_report(self, path: Union[str, Path]) -> McReport:
        try:
            return McReport.model_validate_json(self._read(path))
        except ValidationError as e:
            raise ArtifactIOError(f"Malformed report file {path}: {e}") from e

    def save_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        path = self.path_for(name)
        try:
            with path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            raise ArtifactIOError(f"Cannot write {path}: {e}") from e
        logger.info("Wrote %s", path)
        return path

    def save_text(self, name: str, text: str) -> Path:
        return self._write(name, text)
