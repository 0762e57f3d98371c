import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from app.config import Settings, get_settings
from app.core.cegis import CegisConfig
from app.core.certificates import Certificate, certificate_from_dict
from app.core.conditions import ConditionId, ConditionInstance
from app.core.errors import ValidationError
from app.core.system import ReachAvoidProblem

logger = logging.getLogger(__name__)

BACKEND_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
BENCHMARK_DIR = os.path.join(BACKEND_DIR, 'data', 'benchmarks')
SCHEMA_DIR = os.path.join(BACKEND_DIR, 'schemas')

GOLDEN_PROBLEMS = ('ex1', 'ex2', 'ex3', 'ex4', 'walk1d')

# sha256 of the shipped golden files
GOLDEN_HASHES = {
    'ex1': '8323cccd31aa70de492589bbbddbfaadf69a1784746bf34ccd497b3e312f0619',
    'ex2': 'ff131a38e173d5dd2544f1ad688e49673d14ecbcbd56c659726d4851551c1b6a',
    'ex3': '41d361efd3f0c70c31f65fb83ef2525f634722ab83e83f7b97b6e62286633771',
    'ex4': 'f65ff337bffcf30c085d9ddc851c04dd796e09b1337b27b3bb9510c048041ce6',
    'walk1d': 'fa87ae02370e877b3ad296fc8dc9966655ddfed4cf4b7006b48fbdb1859dec9a',
    'suite': 'e45818ce3882a4800436bfa5907cf1ceccd0d7455280e449d904825eaab2fa44',
}

SUITE_COLUMNS = ['example', 'condition', 'template', 'p', 'scalars', 'lambdas', 'expected', 'source']

PathOrDoc = Union[str, os.PathLike, Mapping[str, Any]]


class DataLoader:
    def __init__(self, benchmark_dir: str = BENCHMARK_DIR, schema_dir: str = SCHEMA_DIR):
        self.benchmark_dir = benchmark_dir
        self.schema_dir = schema_dir
        self._problems: Dict[str, ReachAvoidProblem] = {}
        self._validators: Dict[str, Draft202012Validator] = {}

    def load_json(self, path: Union[str, os.PathLike]) -> Dict[str, Any]:
        """Read a JSON document; decode errors become ValidationError"""
        path = os.fspath(path)
        if not os.path.exists(path):
            raise ValidationError(f"file not found: {path}", field='path')
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Error reading {path}: {e}")
            raise ValidationError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", field=path)

    def save_json(self, doc: Any, path: Union[str, os.PathLike]) -> str:
        path = os.fspath(path)
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(doc, f, indent=2, ensure_ascii=False)
            f.write('\n')
        return path

    def _validator(self, name: str) -> Draft202012Validator:
        if name not in self._validators:
            schema = self.load_json(os.path.join(self.schema_dir, f"{name}.schema.json"))
            self._validators[name] = Draft202012Validator(schema)
        return self._validators[name]

    def validate(self, doc: Any, schema: str, prefix: str = None) -> None:
        """Validate against one of the shipped schemas; the error names the offending field"""
        error = best_match(self._validator(schema).iter_errors(doc))
        if error is not None:
            where = '.'.join([prefix or schema, *(str(p) for p in error.absolute_path)])
            raise ValidationError(error.message, field=where)

    def _read(self, source: PathOrDoc, schema: str, prefix: str = None) -> Dict[str, Any]:
        doc = dict(source) if isinstance(source, Mapping) else self.load_json(source)
        self.validate(doc, schema, prefix)
        return doc

    # Problems

    def benchmark_path(self, name: str) -> str:
        return os.path.join(self.benchmark_dir, f"{name}.json")

    def is_benchmark(self, name: str) -> bool:
        return isinstance(name, str) and os.path.exists(self.benchmark_path(name))

    def load_problem(self, source: PathOrDoc, check: bool = False, settings: Settings = None) -> ReachAvoidProblem:
        """Load a problem from a file path, a benchmark name or an already-parsed document"""
        key = None
        if isinstance(source, (str, os.PathLike)) and not os.path.exists(os.fspath(source)):
            if not self.is_benchmark(os.fspath(source)):
                raise ValidationError(f"no problem file or benchmark named {os.fspath(source)!r}", field='problem')
            key = os.fspath(source)
            if key in self._problems and not check:
                return self._problems[key]
            source = self.benchmark_path(key)
        try:
            doc = self._read(source, 'problem')
            problem = ReachAvoidProblem.from_dict(doc)
        except Exception as e:
            logger.error(f"Error loading problem: {str(e)}")
            raise
        if check:
            settings = settings or get_settings()
            problem.check_by_sampling(settings.sanity_samples, settings.seed)
        if key is not None:
            self._problems[key] = problem
        logger.info(f"Loaded problem {problem.name} (dim {problem.dim}, threshold {problem.threshold})")
        return problem

    def list_problems(self) -> pd.DataFrame:
        rows = []
        for name in sorted(f[:-5] for f in os.listdir(self.benchmark_dir) if f.endswith('.json') and f != 'suite.json'):
            problem = self.load_problem(name)
            rows.append({
                'name': name,
                'dim': problem.dim,
                'disturbance': problem.system.disturbance.kind,
                'threshold': problem.threshold,
                'invariant': problem.invariant is not None,
                'description': problem.description,
            })
        return pd.DataFrame(rows, columns=['name', 'dim', 'disturbance', 'threshold', 'invariant', 'description'])

    def golden_hash(self, name: str) -> str:
        path = os.path.join(self.benchmark_dir, f"{name}.json")
        with open(path, 'rb') as f:
            return hashlib.sha256(f.read()).hexdigest()

    def check_golden(self, name: str) -> bool:
        """Whether a shipped golden file still matches its pinned hash"""
        expected = GOLDEN_HASHES.get(name)
        if expected is None:
            raise ValidationError(f"{name!r} is not a golden file", field='problem')
        ok = self.golden_hash(name) == expected
        if not ok:
            logger.warning(f"Golden file {name}.json does not match its pinned hash")
        return ok

    # Certificates and conditions

    def load_certificate(self, source: PathOrDoc, field: str = 'certificate') -> Certificate:
        doc = self._read(source, 'certificate', field)
        return certificate_from_dict(doc, field)

    def save_certificate(self, cert: Certificate, path: Union[str, os.PathLike]) -> str:
        return self.save_json(cert.to_dict(), path)

    def load_condition(self, source: PathOrDoc, problem: Optional[ReachAvoidProblem] = None,
                       certificates: Mapping[str, Certificate] = None) -> ConditionInstance:
        """
        Load a condition document.

        String certificate entries are paths relative to the condition file.
        Certificates passed explicitly override the document's entries, and
        `problem` overrides the document's problem reference.
        """
        doc, certs, base_dir = self.load_condition_parts(source, skip=certificates)
        if problem is None:
            ref = doc.get('problem')
            if not ref:
                raise ValidationError("no problem given and the condition names none", field='problem')
            path = ref if os.path.isabs(ref) or self.is_benchmark(ref) else os.path.join(base_dir, ref)
            problem = self.load_problem(path)
        certs.update(certificates or {})
        return ConditionInstance(ConditionId.parse(doc['condition_id']), problem, certs, doc['scalars'], doc.get('x0'))

    def load_condition_parts(self, source: PathOrDoc, skip: Mapping[str, Any] = None):
        """The validated document, its resolved certificates and the directory references resolve against"""
        base_dir = os.getcwd() if isinstance(source, Mapping) else os.path.dirname(os.path.abspath(os.fspath(source)))
        doc = self._read(source, 'condition')
        certs: Dict[str, Certificate] = {}
        for role, entry in doc['certificates'].items():
            if skip and role in skip:
                continue
            field = f"certificates.{role}"
            if isinstance(entry, str):
                path = entry if os.path.isabs(entry) else os.path.join(base_dir, entry)
                certs[role] = self.load_certificate(path, field)
            else:
                certs[role] = self.load_certificate(entry, field)
        return doc, certs, base_dir

    def load_cegis_config(self, source: Optional[PathOrDoc], settings: Settings = None) -> CegisConfig:
        if source is None:
            return CegisConfig.from_settings(settings)
        return CegisConfig.from_dict(self._read(source, 'cegis'), settings)

    # Benchmark suite

    def load_suite(self, source: Optional[PathOrDoc] = None) -> pd.DataFrame:
        """Expand the suite blocks into one row per (example, condition, template, p) cell"""
        doc = self._read(source or os.path.join(self.benchmark_dir, 'suite.json'), 'suite')
        rows = []
        for i, block in enumerate(doc['blocks']):
            if len(block['p']) != len(block['expected']):
                raise ValidationError("p and expected must have the same length", field=f"blocks.{i}")
            template = block['template']
            if isinstance(template, Mapping):
                template = ','.join(f"{role}={spec}" for role, spec in sorted(template.items()))
            for p, expected in zip(block['p'], block['expected']):
                rows.append({
                    'example': block['example'],
                    'condition': ConditionId.parse(block['condition']).value,
                    'template': template,
                    'p': float(p),
                    'scalars': dict(block.get('scalars', {})),
                    'lambdas': list(block.get('lambdas', [])),
                    'expected': expected,
                    'source': block.get('source', 'cegis'),
                })
        return pd.DataFrame(rows, columns=SUITE_COLUMNS)

    def clear_cache(self):
        self._problems.clear()


def parse_templates(spec: str, roles: List[str]) -> Dict[str, str]:
    """'net:8x8' for every role, or 'h1=net:4x4,h2=net:8x8' per role"""
    if '=' not in spec:
        return {role: spec.strip() for role in roles}
    templates = {}
    for part in spec.split(','):
        role, sep, value = part.partition('=')
        if not sep or not value.strip():
            raise ValidationError(f"malformed template entry {part!r}", field='template')
        templates[role.strip()] = value.strip()
    missing = set(roles) - set(templates)
    if missing:
        raise ValidationError(f"no template for roles {sorted(missing)}", field='template')
    return {role: templates[role] for role in roles}


def parse_point(text: str, dim: int, field: str = 'x0') -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.replace(' ', '').split(',') if v], dtype=float)
    except ValueError:
        raise ValidationError(f"expected {dim} comma-separated numbers, got {text!r}", field=field)
    if values.shape != (dim,):
        raise ValidationError(f"expected {dim} comma-separated numbers, got {text!r}", field=field)
    return values


# Global instance
data_loader = DataLoader()
