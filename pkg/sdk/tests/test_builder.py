import pytest

from kaas_client import RequestBuilder, ValidationError, f32, i32, matmul_chain
from kaas_client.validation import validate_request_doc


class TestBuilder:
    def test_matmul_chain_builds_clean(self):
        doc = matmul_chain("a", "b", "d", 4).build()
        assert validate_request_doc(doc) == []
        assert [b["name"] for b in doc["buffers"]] == ["A", "B", "C", "D"]
        assert len(doc["invocations"]) == 2
        assert doc["invocations"][1]["args"] == ["C", "C", "D"]

    def test_const_plus_ephemeral_raises_locally(self):
        builder = RequestBuilder("r").buffer(
            "x", 8, "input", is_const=True, is_ephemeral=True)
        with pytest.raises(ValidationError) as err:
            builder.build()
        assert any("mutually exclusive" in v for v in err.value.violations)

    def test_unknown_arg_reference(self):
        builder = RequestBuilder("r").launch("fill", ["ghost"], [i32(1), f32(0.0)])
        with pytest.raises(ValidationError):
            builder.build()

    def test_missing_key_on_persistent_buffer(self):
        builder = RequestBuilder("r").buffer("x", 8, "input")
        with pytest.raises(ValidationError):
            builder.build()

    def test_fluent_chaining(self):
        builder = RequestBuilder("r")
        assert builder.ephemeral("t", 16) is builder
        assert builder.launch("fill", ["t"], [i32(4), f32(1.0)]) is builder
        doc = builder.build()
        assert doc["buffers"][0]["is_ephemeral"] is True
        assert doc["buffers"][0]["key"] is None

    def test_special_float_literals(self):
        assert f32(float("nan"))["value"] == "NaN"
        assert f32(float("inf"))["value"] == "Infinity"
        assert f32(float("-inf"))["value"] == "-Infinity"
        assert f32(1.5)["value"] == 1.5

    def test_dims_validation(self):
        builder = RequestBuilder("r").ephemeral("t", 16).launch(
            "fill", ["t"], [i32(4), f32(0.0)], grid=(0, 1, 1))
        with pytest.raises(ValidationError):
            builder.build()
