import pytest

from shieldchain.chaincode import (
    ChaincodeApi,
    ChaincodeError,
    ChaincodeRequest,
    builtin_registry,
    coffee_invoke,
    decode_request,
    echo_invoke,
    encode_request,
)


class DictApi(ChaincodeApi):
    """Plain dict-backed state for handler unit tests; records call counts."""

    def __init__(self, initial=None):
        self.state = dict(initial or {})
        self.gets = []
        self.puts = []
        super().__init__(self._get, self._put)

    def _get(self, key):
        self.gets.append(key)
        return self.state.get(key)

    def _put(self, key, value, is_delete):
        self.puts.append((key, value, is_delete))
        if is_delete:
            self.state.pop(key, None)
        else:
            self.state[key] = value


class TestCoffee:
    def test_record_on_empty_state(self):
        api = DictApi()
        out = coffee_invoke(ChaincodeRequest("record", (b"alice", b"2")), api)
        assert out == b"ok"
        assert api.state == {"coffee/alice": b"2"}
        # exactly one get and one put: the offload protocol tests rely on this
        assert api.gets == ["coffee/alice"]
        assert api.puts == [("coffee/alice", b"2", False)]

    def test_record_accumulates(self):
        api = DictApi({"coffee/alice": b"2"})
        coffee_invoke(ChaincodeRequest("record", (b"alice", b"2")), api)
        assert api.state["coffee/alice"] == b"4"
        out = coffee_invoke(ChaincodeRequest("query", (b"alice",)), api)
        assert out == b"4"

    def test_query_without_history(self):
        assert coffee_invoke(ChaincodeRequest("query", (b"bob",)), DictApi()) == b"0"

    def test_stats_empty_index(self):
        assert coffee_invoke(ChaincodeRequest("stats", ()), DictApi()) == b""

    def test_stats_sorted_lines(self):
        api = DictApi({
            "coffee/__users": b"bob\nalice",
            "coffee/alice": b"3",
        })
        out = coffee_invoke(ChaincodeRequest("stats", ()), api)
        assert out == b"alice=3\nbob=0"

    def test_unknown_function(self):
        with pytest.raises(ChaincodeError):
            coffee_invoke(ChaincodeRequest("steal", ()), DictApi())

    def test_non_numeric_amount(self):
        with pytest.raises(ChaincodeError):
            coffee_invoke(ChaincodeRequest("record", (b"alice", b"lots")), DictApi())

    def test_wrong_arity(self):
        with pytest.raises(ChaincodeError):
            coffee_invoke(ChaincodeRequest("record", (b"alice",)), DictApi())
        with pytest.raises(ChaincodeError):
            coffee_invoke(ChaincodeRequest("query", ()), DictApi())

    def test_determinism(self):
        for _ in range(3):
            api = DictApi({"coffee/alice": b"7"})
            out = coffee_invoke(ChaincodeRequest("record", (b"alice", b"5")), api)
            assert (out, api.state["coffee/alice"]) == (b"ok", b"12")


class TestEcho:
    def test_concatenates_args(self):
        api = DictApi()
        assert echo_invoke(ChaincodeRequest("echo", (b"a", b"b")), api) == b"ab"
        assert api.gets == []

    def test_empty_args(self):
        assert echo_invoke(ChaincodeRequest("echo", ()), DictApi()) == b""

    def test_burn_issues_exact_get_count(self):
        api = DictApi()
        echo_invoke(ChaincodeRequest("burn3", ()), api)
        assert api.gets == ["burn/0", "burn/1", "burn/2"]

    def test_burn_zero(self):
        api = DictApi()
        echo_invoke(ChaincodeRequest("burn0", (b"x",)), api)
        assert api.gets == []


class TestRequestCodec:
    def test_round_trip(self):
        req = ChaincodeRequest("record", (b"alice", b"2"))
        assert decode_request(encode_request(req)) == req

    def test_empty_function_rejected(self):
        with pytest.raises(ChaincodeError):
            ChaincodeRequest("", ())


class TestRegistry:
    def test_builtins_resolve(self):
        reg = builtin_registry()
        assert reg.resolve("coffee") is not None
        assert reg.resolve("echo") is not None
        assert reg.resolve("nonexistent") is None

    def test_duplicate_name_rejected(self):
        reg = builtin_registry()
        with pytest.raises(ValueError):
            reg.register("coffee", reg.resolve("echo"))

    def test_handler_invoke_through_registry(self):
        reg = builtin_registry()
        api = DictApi()
        out = reg.resolve("coffee").invoke(
            encode_request(ChaincodeRequest("record", (b"bob", b"1"))), api)
        assert out == b"ok"
        assert api.state == {"coffee/bob": b"1"}
