import datetime
import json
import math

from typing import Any, Dict, Optional

import humps

from lbs_estimator.types.estimates import AggregateEstimate


class PartialResultsError(Exception):
    """
    Error raised by a command after its report was written, when the query budget ran out before the run
    finished; the report is flagged partial.
    """
    def __init__(self, command: str):
        super().__init__(f'{command}: query budget exhausted; report is partial')


class Report:
    """
    Structured result of one command: what ran, with which configuration, and what came out. Serialized
    as JSON with camelCase keys in stable order; `generatedAt` is the only field that changes between
    identical runs.
    """
    def __init__(self, command: str, results: Dict[str, Any], config: Optional[Any] = None, partial: bool = False):
        self.command = command
        self.results = results
        self.config = config
        self.partial = partial

    def to_dict(self, generated_at: Optional[str] = None) -> Dict[str, Any]:
        if generated_at is None:
            generated_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        doc = {
            'command': self.command,
            'partial': self.partial,
            'results': _plain(self.results),
            'generated_at': generated_at
        }
        if self.config is not None:
            doc['config'] = self.config
        return humps.camelize(doc)

    def to_json(self, generated_at: Optional[str] = None) -> str:
        return json.dumps(self.to_dict(generated_at), sort_keys=True, indent=2)

    def write(self, output: Optional[str] = None) -> str:
        """
        Writes the report to a file when a path is given and returns the JSON text.
        """
        text = self.to_json()
        if output:
            with open(output, 'w') as f:
                f.write(text + '\n')
        return text


def estimate_fields(estimate: AggregateEstimate, truth: Optional[float] = None) -> Dict[str, Any]:
    """
    Flattens an AggregateEstimate into report fields, adding the relative error when ground truth is known.
    """
    fields = {
        'kind': estimate.kind.value,
        'value': estimate.value,
        'sample_variance': estimate.sample_variance,
        'std_error': estimate.std_error,
        'ci95': list(estimate.ci95),
        'samples': estimate.samples,
        'discarded': estimate.discarded,
        'queries': estimate.queries,
        'partial': estimate.partial,
        'biased': estimate.biased,
        'ledger': estimate.ledger.to_dict(),
        'h_histogram': {str(h): n for h, n in estimate.h_histogram.items()}
    }
    if truth is not None:
        fields['truth'] = truth
        fields['relative_error'] = estimate.relative_error(truth)
    return fields


def _plain(value: Any) -> Any:
    # JSON has no NaN or infinity
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, 'item') and not isinstance(value, (str, bytes)):
        return _plain(value.item())
    return value
