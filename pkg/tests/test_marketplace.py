import asyncio
import itertools
from datetime import timedelta

import pytest

from servicenet.client.app import PeerApp, QuoteView
from servicenet.client.filters import Filter
from servicenet.client.store import Quote, now_utc
from servicenet.errors import ServiceNetError
from servicenet.model.geo import GeoPoint
from servicenet.transport.session import SessionState

from conftest import broker, broker_url, run

# Use-case geography: the requester and one provider are in the same city,
# the other provider is ~1,000 km away.
CHEN = GeoPoint(31.2304, 121.4737)
TOM = GeoPoint(31.25, 121.45)
JERRY = GeoPoint(39.9042, 116.4074)

COUNTER = itertools.count(1)


async def make_app(server, tmp_path, name, location, filters=None):
    app = PeerApp(str(tmp_path / f"{name}.db"), broker_url(server),
                  location=location, filters=filters,
                  device_fingerprint=f"dev-{name}".encode())
    await app.start()
    await app.register(f"{name}{next(COUNTER)}@example.com", name.title())
    await app.watch()
    return app


async def drain_until(queue, predicate, timeout=5.0):
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while True:
        ev = await asyncio.wait_for(queue.get(), deadline - loop.time())
        if predicate(ev):
            return ev


def radius_filters():
    return [Filter.parse("svc.request.>; within_km 25")]


def test_remote_request_reaches_both_distant_providers(tmp_path):
    async def main():
        async with broker() as server:
            chen = await make_app(server, tmp_path, "chen", CHEN)
            tom = await make_app(server, tmp_path, "tom", TOM, radius_filters())
            jerry = await make_app(server, tmp_path, "jerry", JERRY, radius_filters())
            tom_q, jerry_q = tom.subscribe_events(), jerry.subscribe_events()

            wid = await chen.publish_wanted(
                "proofreading", "English paper, 8 pages", CHEN,
                remote_capable=True, budget_cents=3000, currency="CNY")

            for q in (tom_q, jerry_q):
                ev = await drain_until(q, lambda e: e["event"] == "request")
                assert ev["wanted"]["wanted_id"] == wid
            assert tom.store.wanted(wid) is not None
            assert jerry.store.wanted(wid) is not None
            for app in (chen, tom, jerry):
                await app.stop()
    run(main())


def test_location_bound_request_reaches_only_nearby_provider(tmp_path):
    async def main():
        async with broker() as server:
            chen = await make_app(server, tmp_path, "chen", CHEN)
            tom = await make_app(server, tmp_path, "tom", TOM, radius_filters())
            jerry = await make_app(server, tmp_path, "jerry", JERRY, radius_filters())
            tom_q = tom.subscribe_events()

            wid = await chen.publish_wanted(
                "plumbing", "burst pipe under sink", CHEN,
                remote_capable=False, budget_cents=8000, currency="CNY")

            ev = await drain_until(tom_q, lambda e: e["event"] == "request")
            assert ev["wanted"]["wanted_id"] == wid
            await asyncio.sleep(0.3)  # give a wrong delivery time to land
            assert jerry.store.wanted(wid) is None
            assert jerry.gateway.rejected >= 1
            for app in (chen, tom, jerry):
                await app.stop()
    run(main())


def test_quote_accept_chat_rate_flow(tmp_path):
    async def main():
        async with broker() as server:
            chen = await make_app(server, tmp_path, "chen", CHEN)
            tom = await make_app(server, tmp_path, "tom", TOM, radius_filters())
            jerry = await make_app(server, tmp_path, "jerry", JERRY, radius_filters())
            chen_q = chen.subscribe_events()
            tom_q = tom.subscribe_events()
            jerry_q = jerry.subscribe_events()

            # reputations: tom has a 5, jerry a 3 (published by chen earlier)
            await chen.rate_peer(tom.pid, 5, "great work")
            await chen.rate_peer(jerry.pid, 3, "ok")
            await asyncio.sleep(0.2)

            wid = await chen.publish_wanted(
                "proofreading", "thesis chapter", CHEN,
                remote_capable=True, budget_cents=5000, currency="CNY")
            for q in (tom_q, jerry_q):
                await drain_until(q, lambda e: e["event"] == "request")

            # tom is cheaper and better rated; jerry pricier
            q_tom = await tom.submit_quote(wid, 3000, note="two days")
            q_jerry = await jerry.submit_quote(wid, 4500, note="tomorrow")
            for _ in range(2):
                await drain_until(chen_q, lambda e: e["event"] == "quote")

            ranked = chen.list_quotes(wid)
            assert [v.quote.quote_id for v in ranked] == [q_tom, q_jerry]
            assert ranked[0].provider_rating == 5.0

            session = await chen.accept_quote(q_tom)
            assert session.state is SessionState.CONNECTED
            ev = await drain_until(tom_q, lambda e: e["event"] == "accepted")
            assert ev["wanted_id"] == wid
            assert chen.store.wanted(wid).status == "ACCEPTED"

            # losing provider hears the acceptance and can see it's not his
            lose = await drain_until(jerry_q, lambda e: e["event"] == "accepted"
                                     or e["event"] == "quote")
            if lose["event"] == "accepted":
                assert lose.get("winner") != jerry.pid

            # chat both ways persists on both sides
            await chen.send_chat(tom.pid, "when can you start?")
            await drain_until(tom_q, lambda e: e["event"] == "chat")
            await tom.send_chat(chen.pid, "tomorrow morning")
            await drain_until(chen_q, lambda e: e["event"] == "chat")
            chen_hist = chen.store.chat_history(tom.pid)
            tom_hist = tom.store.chat_history(chen.pid)
            assert [m.body for m in chen_hist] == \
                ["when can you start?", "tomorrow morning"]
            assert [m.body for m in tom_hist] == [m.body for m in chen_hist]

            # rating the provider afterwards is visible to everyone watching
            await chen.rate_peer(tom.pid, 4, "solid")
            await asyncio.sleep(0.2)
            assert len(chen.store.ratings_for(tom.pid)) == 2

            for app in (chen, tom, jerry):
                await app.stop()
    run(main())


def test_quote_on_unknown_or_closed_wanted_is_err_state(tmp_path):
    async def main():
        async with broker() as server:
            chen = await make_app(server, tmp_path, "chen", CHEN)
            tom = await make_app(server, tmp_path, "tom", TOM, radius_filters())
            tom_q = tom.subscribe_events()

            with pytest.raises(ServiceNetError) as e:
                await tom.submit_quote("nonexistent", 1000)
            assert e.value.code == "ERR_STATE"

            wid = await chen.publish_wanted(
                "plumbing", "drip", CHEN, remote_capable=True,
                budget_cents=1000, currency="CNY")
            await drain_until(tom_q, lambda e: e["event"] == "request")
            qid = await tom.submit_quote(wid, 900)
            await asyncio.sleep(0.2)
            await chen.accept_quote(qid)
            await asyncio.sleep(0.3)

            # provider's copy flipped to ACCEPTED; further quoting refused
            assert tom.store.wanted(wid).status == "ACCEPTED"
            with pytest.raises(ServiceNetError) as e:
                await tom.submit_quote(wid, 800)
            assert e.value.code == "ERR_STATE"

            # accepting twice is also refused
            with pytest.raises(ServiceNetError) as e:
                await chen.accept_quote(qid)
            assert e.value.code == "ERR_STATE"
            await chen.stop(); await tom.stop()
    run(main())


def test_outbound_filter_can_block_own_publish(tmp_path):
    async def main():
        async with broker() as server:
            chen = await make_app(server, tmp_path, "chen", CHEN)
            chen.outbound.filters = [Filter.parse("svc.request.plumbing")]
            with pytest.raises(ServiceNetError) as e:
                await chen.publish_wanted("tutoring", "math", CHEN,
                                          remote_capable=True,
                                          budget_cents=100, currency="CNY")
            assert e.value.code == "ERR_FILTERED"
            # nothing leaked into the store either
            assert chen.store.wanteds() == []
            await chen.stop()
    run(main())


# -- ranking comparator against a brute-force oracle -----------------------

def view(price, rating, order, qid):
    t0 = now_utc()
    q = Quote(quote_id=qid, wanted_id="w", provider=f"P{qid:0>5}",
              price_cents=price, currency="USD", note="",
              received_at=t0 + timedelta(seconds=order))
    return QuoteView(q, rating)


def rank(views):
    return sorted(views, key=lambda v: (
        v.quote.price_cents,
        -(v.provider_rating if v.provider_rating is not None else 0.0),
        v.quote.received_at,
        v.quote.quote_id,
    ))


def test_ranking_price_then_rating_then_arrival():
    a = view(1000, 4.0, 0, "a")
    b = view(900, None, 1, "b")     # cheapest wins regardless of rating
    c = view(1000, 5.0, 2, "c")     # same price, better rating than a
    d = view(1000, 4.0, 3, "d")     # ties with a, arrived later
    ranked = rank([a, b, c, d])
    assert [v.quote.quote_id for v in ranked] == ["b", "c", "a", "d"]
    # unrated sorts as 0, below any positive rating
    e = view(1000, None, 4, "e")
    assert [v.quote.quote_id for v in rank([a, e])] == ["a", "e"]
