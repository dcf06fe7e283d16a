import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers

from numerics.params import ParamStore

from .corpus import read_ads, read_users, write_ads, write_users
from .exceptions import InvalidRecordError, UnknownFeatureError, UnknownUserError
from .records import AdFeatureRecord, FeatureSchema, UserFeatureRecord
from .service import HybridFeatureService

SCHEMA = FeatureSchema(ad_vocab=(6, 5, 4), user_vocab=(3, 4), context_vocab=(4, 3), behavior_length=4)


def make_ads(n, rng):
    return [
        AdFeatureRecord(
            ad_id=i + 1,
            features=tuple(int(rng.integers(1, v)) for v in SCHEMA.ad_vocab),
            bid=1.0 + i % 3,
            private_value=1.0 + i % 3,
        )
        for i in range(n)
    ]


class HybridFeatureServiceTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.ads = make_ads(1000, self.rng)
        self.service = HybridFeatureService(
            ParamStore(), SCHEMA, d=8, rng=self.rng, ads=self.ads, namespace=f"test-{self.id()}"
        )
        self.user = UserFeatureRecord(
            user_id=7, features=(1, 2), behaviors=(3, 9), timestamps=(10, 11), context=(2, 1)
        )
        self.service.publish_users([self.user])

    def test_all_null_ad_is_zero_row(self):
        null_ad = AdFeatureRecord(ad_id=5000, features=(0, 0, 0), bid=1.0, private_value=1.0)
        out = self.service.embed_ads([null_ad])
        self.assertEqual(out.shape, (1, 8))
        self.assertFalse(out.data.any())

    def test_identical_features_identical_rows(self):
        a = AdFeatureRecord(ad_id=1, features=(2, 3, 1), bid=1.0, private_value=1.0)
        b = AdFeatureRecord(ad_id=2, features=(2, 3, 1), bid=2.0, private_value=2.0)
        out = self.service.embed_ads([a, b]).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_embed_counts_local_fetches(self):
        self.service.embed_ads(self.ads[:3])
        counters = self.service.counters_report()
        self.assertEqual(counters.local_fetches, 3)
        self.assertEqual(counters.remote_calls, 0)

    def test_unknown_feature_rejected_with_id(self):
        bad = AdFeatureRecord(ad_id=1, features=(99, 1, 1), bid=1.0, private_value=1.0)
        with self.assertRaises(UnknownFeatureError) as ctx:
            self.service.embed_ads([bad])
        self.assertIn("99", str(ctx.exception))

    def test_one_remote_call_per_request(self):
        e_u, e_bhvr = self.service.fetch_user(self.user)
        self.assertEqual(e_u.shape, (1, 8))
        self.assertEqual(e_bhvr.shape, (4, 8))
        self.assertEqual(self.service.counters_report().remote_calls, 1)
        # padded slots are the null ad
        self.assertFalse(e_bhvr.data[2:].any())
        self.assertTrue(e_bhvr.data[:2].any())

    def test_empty_behavior_sequence_is_zero(self):
        user = UserFeatureRecord(user_id=8, features=(1, 1), behaviors=(), timestamps=(), context=(0, 0))
        self.service.publish_users([user])
        _, e_bhvr = self.service.fetch_user(user)
        self.assertFalse(e_bhvr.data.any())

    def test_remote_bytes_independent_of_candidate_count(self):
        deltas = []
        for n in (10, 1000):
            before = self.service.counters_report()
            self.service.fetch_user(self.user)
            self.service.embed_ads(self.ads[:n])
            after = self.service.counters_report()
            self.assertEqual(after.remote_calls - before.remote_calls, 1)
            deltas.append((after.bytes_remote - before.bytes_remote, after.bytes_local - before.bytes_local))
        self.assertEqual(deltas[0][0], deltas[1][0])
        self.assertEqual(deltas[1][1], 100 * deltas[0][1])

    def test_counters_snapshot_is_a_copy_and_monotone(self):
        fresh = HybridFeatureService(ParamStore(), SCHEMA, d=8, rng=self.rng, namespace=f"fresh-{self.id()}")
        self.assertEqual(fresh.counters_report().as_dict(), {
            "local_fetches": 0, "remote_calls": 0, "bytes_local": 0, "bytes_remote": 0,
        })
        first = self.service.counters_report()
        first.local_fetches = 10 ** 6
        self.service.fetch_user(self.user)
        second = self.service.counters_report()
        self.assertLess(second.local_fetches, 10 ** 6)
        for key, value in self.service.counters_report().as_dict().items():
            self.assertGreaterEqual(second.as_dict()[key], 0)
            self.assertGreaterEqual(value, second.as_dict()[key])

    def test_additive_local_fetches(self):
        for _ in range(4):
            self.service.embed_ads(self.ads[:25])
        self.assertEqual(self.service.counters_report().local_fetches, 100)

    def test_unknown_user_rejected(self):
        with self.assertRaises(UnknownUserError):
            self.service.fetch_user(12345)


class RecordTests(SimpleTestCase):
    def test_nonpositive_bid_rejected(self):
        with self.assertRaises(InvalidRecordError):
            AdFeatureRecord(ad_id=1, features=(1,), bid=0.0, private_value=1.0)

    def test_padding(self):
        user = UserFeatureRecord(user_id=1, features=(), behaviors=(4, 5, 6), timestamps=(1, 2, 3), context=())
        self.assertEqual(user.padded_behaviors(2), (5, 6))
        self.assertEqual(user.padded_behaviors(5), (4, 5, 6, 0, 0))


class CorpusFileTests(SimpleTestCase):
    def test_files_reload_records(self):
        ads = make_ads(5, np.random.default_rng(1))
        users = [UserFeatureRecord(user_id=3, features=(1, 2), behaviors=(1, 2), timestamps=(5, 6), context=(1, 1))]
        with tempfile.TemporaryDirectory() as tmp:
            write_ads(Path(tmp) / "ads.jsonl", ads)
            write_users(Path(tmp) / "users.jsonl", users)
            self.assertEqual(read_ads(Path(tmp) / "ads.jsonl"), ads)
            self.assertEqual(read_users(Path(tmp) / "users.jsonl"), {3: users[0]})
            first_line = json.loads((Path(tmp) / "ads.jsonl").read_text().splitlines()[0])
            self.assertEqual(first_line["schema_version"], 1)

    def test_wrong_schema_version_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ads.jsonl"
            path.write_text(json.dumps({
                "ad_id": 1, "features": [1], "bid": 1.0, "private_value": 1.0, "schema_version": 9,
            }) + "\n")
            with self.assertRaises(serializers.ValidationError):
                read_ads(path)
