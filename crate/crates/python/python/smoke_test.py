"""Exercise the codecaps extension module end to end."""

import codecaps


def main():
    service = codecaps.KeyPair(bytes([7]) * 32)
    alice = codecaps.KeyPair(bytes([8]) * 32)
    bob = codecaps.KeyPair()

    svc = codecaps.ObjectService(service, realm="smoke.example")
    obj = svc.create_object()
    owner = codecaps.Codecap(svc.mint(obj, alice.public_key, "1", 3), alice)
    assert svc.call(owner, {"type": "WRITE", "value": "0123456789"}).ok

    rights = 'request.type == "READ" && request.offset >= 4'
    shared = codecaps.Codecap(owner.delegate(bob.public_key, rights, 1), bob)
    assert len(shared.heritage) == 2
    shared.heritage.validate(service.public_key)

    r = svc.call(shared, {"type": "READ", "offset": 4, "length": 3})
    assert (r.status, r.payload) == (200, b"456"), r
    r = svc.call(shared, {"type": "READ", "offset": 0})
    assert (r.status, r.stage) == (403, "rights(2)"), r

    request = shared.sign_request({"type": "READ", "offset": 5})
    decision = codecaps.authorize(service.public_key, shared.heritage, request, transport=bob.public_key)
    assert decision and decision.failing_stage is None
    assert [ok for ok, _, _ in decision.rights_outcomes] == [True, True]

    back = codecaps.Heritage.from_armor(shared.heritage.armor())
    assert back == shared.heritage
    header = shared.heritage.auth_header()
    assert header.startswith("Authentication: Codecaps ")
    assert codecaps.Heritage.from_auth_header(header) == shared.heritage

    amplified = codecaps.amplify(shared.heritage, alice)
    assert amplified.heritage == owner.heritage

    try:
        codecaps.Heritage.from_armor(shared.heritage.armor().replace("A", "B", 3)).validate(service.public_key)
    except ValueError as e:
        assert "chain break at cert" in str(e) or "block" in str(e), e
    else:
        raise AssertionError("tampered heritage validated")

    print("codecaps smoke test ok:", svc.gc_sweep())


if __name__ == "__main__":
    main()
