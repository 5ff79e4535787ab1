"""
Serializers for fitted model documents.

A model document is a JSON object:

    {
      "schema_version": 1,
      "method": "rhlp" | "piecewise" | "hmm",
      "K": 4, "p": 2,
      "parameters": {...},      # per method, see the parameter serializers
      "loglik": -1234.5,
      "metadata": {"n": 500, "n_iter": 42, "seed": 0, "converged": true, ...}
    }

Floats are emitted with the shortest repr that round-trips, so
parse_document(render_document(doc)) == doc.
"""

import json
from typing import Any, Dict

from rest_framework import serializers

from rhlp.exceptions import InputFormatError

SCHEMA_VERSION = 1
METHOD_CHOICES = ['rhlp', 'piecewise', 'hmm']


def _matrix():
    return serializers.ListField(child=serializers.ListField(child=serializers.FloatField()), allow_empty=False)


def _check_shape(matrix, rows: int, cols: int, name: str):
    if len(matrix) != rows or any(len(row) != cols for row in matrix):
        raise serializers.ValidationError(f"{name} must be {rows}x{cols}")


class RhlpParametersSerializer(serializers.Serializer):
    """
    Gate weights (K×2, last row zero), polynomial coefficients
    (K×(p+1), increasing degree) and the shared variance.
    """

    w = _matrix()
    beta = _matrix()
    sigma2 = serializers.FloatField(min_value=0.0)

    def validate(self, attrs):
        K, p = self.context['K'], self.context['p']
        _check_shape(attrs['w'], K, 2, 'w')
        _check_shape(attrs['beta'], K, p + 1, 'beta')
        if any(value != 0.0 for value in attrs['w'][-1]):
            raise serializers.ValidationError("last gate row must be zero")
        if attrs['sigma2'] <= 0.0:
            raise serializers.ValidationError("sigma2 must be positive")
        return attrs


class PiecewiseParametersSerializer(serializers.Serializer):
    """
    Segment start indices, per-segment coefficients and the residual
    variance sse/n.
    """

    boundaries = serializers.ListField(child=serializers.IntegerField(min_value=1))
    beta = _matrix()
    sigma2 = serializers.FloatField(min_value=0.0)

    def validate_boundaries(self, value):
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise serializers.ValidationError("boundaries must be strictly increasing")
        return value

    def validate(self, attrs):
        K, p = self.context['K'], self.context['p']
        if len(attrs['boundaries']) != K - 1:
            raise serializers.ValidationError(f"expected {K - 1} boundaries")
        _check_shape(attrs['beta'], K, p + 1, 'beta')
        return attrs


class HmmParametersSerializer(serializers.Serializer):
    """Initial law, row-stochastic transitions, emission polynomials and variance."""

    initial = serializers.ListField(child=serializers.FloatField(min_value=0.0), allow_empty=False)
    trans = _matrix()
    beta = _matrix()
    sigma2 = serializers.FloatField(min_value=0.0)

    def validate(self, attrs):
        K, p = self.context['K'], self.context['p']
        if len(attrs['initial']) != K:
            raise serializers.ValidationError(f"initial must have {K} entries")
        _check_shape(attrs['trans'], K, K, 'trans')
        _check_shape(attrs['beta'], K, p + 1, 'beta')
        if attrs['sigma2'] <= 0.0:
            raise serializers.ValidationError("sigma2 must be positive")
        return attrs


PARAMETER_SERIALIZERS = {
    'rhlp': RhlpParametersSerializer,
    'piecewise': PiecewiseParametersSerializer,
    'hmm': HmmParametersSerializer,
}


class FitMetadataSerializer(serializers.Serializer):
    n = serializers.IntegerField(min_value=1)
    n_iter = serializers.IntegerField(min_value=0)
    seed = serializers.IntegerField(min_value=0)
    converged = serializers.BooleanField()
    normalized_time = serializers.BooleanField(default=False)
    time_shift = serializers.FloatField(default=0.0)
    time_scale = serializers.FloatField(default=1.0)


class ModelDocumentSerializer(serializers.Serializer):
    """
    Serializer for a complete model document.

    ``parameters`` is validated by the serializer matching ``method``.
    """

    schema_version = serializers.IntegerField()
    method = serializers.ChoiceField(choices=METHOD_CHOICES)
    K = serializers.IntegerField(min_value=1)
    p = serializers.IntegerField(min_value=0)
    parameters = serializers.DictField()
    loglik = serializers.FloatField()
    metadata = FitMetadataSerializer()

    def validate_schema_version(self, value):
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(f"unsupported schema_version {value}; expected {SCHEMA_VERSION}")
        return value

    def validate(self, attrs):
        serializer_class = PARAMETER_SERIALIZERS[attrs['method']]
        nested = serializer_class(data=attrs['parameters'], context={'K': attrs['K'], 'p': attrs['p']})
        if not nested.is_valid():
            raise serializers.ValidationError({'parameters': nested.errors})
        attrs['parameters'] = dict(nested.validated_data)
        return attrs


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def validate_document(document: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validated, normalized copy of a document.

    Raises:
        InputFormatError: the document violates the schema
    """
    serializer = ModelDocumentSerializer(data=document)
    if not serializer.is_valid():
        raise InputFormatError(f"invalid model document: {json.dumps(serializer.errors)}")
    return _plain(serializer.validated_data)


def render_document(document: Dict[str, Any]) -> str:
    return json.dumps(validate_document(document), indent=2) + '\n'


def parse_document(text: str) -> Dict[str, Any]:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"model document is not JSON: {exc.msg}", exc.lineno)
    if not isinstance(document, dict):
        raise InputFormatError("model document must be a JSON object")
    return validate_document(document)
