import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ueba.errors import NonFiniteError, SchemaError
from ueba.features import (
    INPUT_COLUMNS,
    NUMERIC_FEATURES,
    EventKind,
    RawEvent,
    aggregate,
    apply_scaler,
    fit_scaler,
    invert_scaler,
    read_events,
    read_features,
    write_events,
    write_features,
)

H = 3600


def ev(t, kind, user="alice", ws="ws1", **payload):
    return RawEvent(float(t), user, ws, kind, payload)


def test_column_layout():
    assert len(NUMERIC_FEATURES) == 19
    assert len(INPUT_COLUMNS) == 83
    assert INPUT_COLUMNS[19] == "e0" and INPUT_COLUMNS[-1] == "e63"


class TestAggregate:
    def test_login_gaps(self):
        recs = aggregate([ev(0, "login_ok"), ev(60, "login_ok"), ev(180, "login_ok")], H, default_role="CM")
        assert len(recs) == 1
        assert recs[0]["num_logins"] == 3
        assert recs[0]["avg_sec_bet_logins"] == 90  # mean of gaps 60 and 120

    def test_empty_window_inside_span(self):
        recs = aggregate([ev(10, "login_ok"), ev(2 * H + 5, "login_ok")], H, default_role="CM")
        assert [r.key.start for r in recs] == [0, H, 2 * H]
        empty = recs[1]
        for name in NUMERIC_FEATURES:
            expected = H if name.startswith("avg_sec") else 0
            assert empty[name] == expected, name
        assert empty.process_list == ()

    def test_single_failed_login_imputed(self):
        (rec,) = aggregate([ev(100, "login_fail")], H, default_role="CM")
        assert rec["num_f_logins"] == 1
        assert rec["avg_sec_bet_f_logins"] == H

    def test_payload_sums_and_workstations(self):
        events = [
            ev(1, "email_sent", size=100, attachments=2, links=1),
            ev(2, "email_sent", ws="ws2", size=50, attachments=0, links=3),
            ev(3, "email_received", size=7, attachments=1, links=0),
            ev(4, "process_start", path="C:\\Windows\\Explorer.EXE"),
            ev(5, "ps_4104"),
        ]
        (rec,) = aggregate(events, H, default_role="EP")
        assert rec["sent_emails"] == 2 and rec["sent_emails_size"] == 150
        assert rec["sent_email_files"] == 2 and rec["sent_email_links"] == 4
        assert rec["received_emails_size"] == 7 and rec["received_email_files"] == 1
        assert rec["workstation_count"] == 2
        assert rec["events_4104"] == 1 and rec["num_new_process"] == 1
        assert rec.process_list == ("c:\\windows\\explorer.exe",)

    def test_unmapped_users(self):
        events = [ev(0, "login_ok", user="bob")]
        assert aggregate(events, H, role_map={"alice": "CM"}) == []
        with pytest.raises(SchemaError):
            aggregate(events, H, role_map={"alice": "CM"}, on_unmapped="fail")

    def test_negative_payload_rejected(self):
        with pytest.raises(SchemaError):
            ev(0, "email_sent", size=-1)

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(0, 5 * H, allow_nan=False),
                st.sampled_from(list(EventKind)),
                st.sampled_from(["u1", "u2"]),
            ),
            min_size=1,
            max_size=60,
        ),
        st.integers(1, 5),
    )
    def test_conservation_bounds_and_chunking(self, raw, n_chunks):
        events = [RawEvent(t, u, "w", k, {"path": "p.exe"} if k == "process_start" else {}) for t, k, u in raw]
        recs = aggregate(events, H, default_role="CM")
        for kind, col in [("login_ok", "num_logins"), ("login_fail", "num_f_logins"), ("process_start", "num_new_process")]:
            assert sum(r[col] for r in recs) == sum(1 for e in events if e.kind == kind)
        for r in recs:
            assert 0 <= r["avg_sec_bet_logins"] <= H and 0 <= r["avg_sec_bet_f_logins"] <= H
        # a reordered stream (e.g. read in chunks and concatenated differently) folds the same
        chunks = [events[i::n_chunks] for i in range(n_chunks)]
        shuffled = [e for chunk in reversed(chunks) for e in chunk]
        assert aggregate(shuffled, H, default_role="CM") == recs


class TestIO:
    def test_event_round_trip(self, tmp_path):
        events = [ev(1.5, "email_sent", size=10, attachments=1, links=0), ev(3600, "process_start", path="a.exe")]
        write_events(events, tmp_path / "e.jsonl")
        back = read_events(tmp_path / "e.jsonl")
        assert back == events
        line = json.loads((tmp_path / "e.jsonl").read_text().splitlines()[0])
        assert set(line) == {"time", "user", "workstation", "kind", "payload"}
        assert line["time"].startswith("1970-01-01T00:00:01.5")

    def test_bad_line_reports_location(self, tmp_path):
        (tmp_path / "e.jsonl").write_text('{"time": "2024-01-01T00:00:00", "user": "a"}\n')
        with pytest.raises(SchemaError) as err:
            read_events(tmp_path / "e.jsonl")
        assert err.value.context["line"] == 1

    def test_feature_csv_round_trip(self, tmp_path):
        recs = aggregate(
            [ev(0, "process_start", path='C:\\x, "y".exe'), ev(10, "login_ok"), ev(4000, "login_fail")],
            H,
            default_role="CM",
        )
        write_features(recs, tmp_path / "f.csv")
        assert read_features(tmp_path / "f.csv") == recs


class TestScaler:
    def test_quartiles(self):
        p = fit_scaler(np.array([[0.0], [1.0], [2.0], [3.0], [4.0]]))
        assert p.median[0] == 2 and p.iqr[0] == 2  # q25 = 1, q75 = 3

    def test_constant_column(self):
        X = np.column_stack([np.full(5, 7.0), np.arange(5.0)])
        p = fit_scaler(X)
        assert p.median[0] == 7 and p.iqr[0] == 0
        np.testing.assert_array_equal(apply_scaler(p, X)[:, 0], 0.5)

    def test_median_maps_to_formula(self):
        X = np.random.default_rng(0).normal(size=(50, 4))
        p = fit_scaler(X)
        out = apply_scaler(p, p.median)
        np.testing.assert_allclose(out, (0 - p.min) / (p.max - p.min))

    def test_training_rows_in_unit_box_and_unclamped(self):
        X = np.random.default_rng(1).exponential(size=(40, 6))
        p = fit_scaler(X)
        S = apply_scaler(p, X)
        assert S.min() >= 0 and S.max() <= 1
        assert np.all(apply_scaler(p, X.max(axis=0) + 10) > 1)

    def test_deterministic(self):
        X = np.random.default_rng(2).normal(size=(20, 3))
        assert fit_scaler(X).dumps() == fit_scaler(X.copy()).dumps()

    def test_rejects_bad_input(self):
        with pytest.raises(NonFiniteError):
            fit_scaler(np.array([[1.0], [np.nan]]))
        with pytest.raises(ValueError):
            fit_scaler(np.ones((1, 3)))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)))
    def test_round_trip_and_order(self, X):
        p = fit_scaler(X)
        S = apply_scaler(p, X)
        ok = p.max > p.min
        back = invert_scaler(p, S)
        np.testing.assert_allclose(back[:, ok], X[:, ok], atol=1e-9, rtol=1e-9)
        for j in np.flatnonzero(ok):
            order = np.argsort(X[:, j], kind="stable")
            assert np.all(np.diff(S[order, j]) >= -1e-12)


@pytest.fixture(scope="module")
def d2v_model():
    from ueba.doc2vec import Doc2VecParams, train_dbow

    corpus = [["a.exe", "b.exe", "c.exe"], ["b.exe", "d.exe"]] * 5
    return train_dbow(corpus, Doc2VecParams(dim=64, epochs=2, infer_steps=5))


class TestEmbedding:
    def test_layout_and_numerics_pass_through(self, d2v_model):
        from ueba.features import attach_embedding, embed_records

        recs = aggregate(
            [ev(10, "login_ok"), ev(20, "process_start", path="A.exe"), ev(H + 5, "login_fail")],
            H,
            default_role="CM",
        )
        X, degenerate = embed_records(recs, d2v_model)
        assert X.shape == (2, len(INPUT_COLUMNS))
        for i, rec in enumerate(recs):
            assert X[i, :19].tolist() == [float(rec[name]) for name in NUMERIC_FEATURES]
        row, flag = attach_embedding(recs[0], d2v_model)
        np.testing.assert_array_equal(row, X[0])
        assert not flag and np.any(row[19:] != 0)

    def test_empty_process_list_is_degenerate_zero(self, d2v_model):
        from ueba.features import attach_embedding

        (rec,) = aggregate([ev(10, "login_fail")], H, default_role="CM")
        row, flag = attach_embedding(rec, d2v_model)
        assert flag and np.all(row[19:] == 0)
