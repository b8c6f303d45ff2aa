import json
import tempfile
from pathlib import Path

from rest_framework import status
from rest_framework.test import APITestCase

from lab.models import ExperimentRun


class ExperimentRunApiTests(APITestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        out = Path(self.tmp.name)
        (out / 'manifest.json').write_text(json.dumps({'subcommand': 'modulus', 'seed': 3}))
        self.with_manifest = ExperimentRun.objects.create(
            subcommand='modulus', seed=3, shards=1, params={'phi': 'logpow(2.0)'}, out_dir=str(out),
            status='PASSED', summary='3/3 assertions passed',
        )
        self.failed = ExperimentRun.objects.create(
            subcommand='linear', seed=4, shards=2, params={'probe': 'scaling'}, out_dir=str(out / 'missing'),
            status='FAILED', summary='1/2 assertions passed',
        )

    def test_list_runs(self):
        response = self.client.get('/runs/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data), 2)

    def test_filters(self):
        response = self.client.get('/runs/', {'subcommand': 'linear'})
        self.assertEqual([r['subcommand'] for r in response.data], ['linear'])
        response = self.client.get('/runs/', {'status': 'passed'})
        self.assertEqual([r['seed'] for r in response.data], [3])

    def test_stats(self):
        response = self.client.get('/runs/stats/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        counts = {(r['subcommand'], r['status']): r['count'] for r in response.data}
        self.assertEqual(counts, {('linear', 'FAILED'): 1, ('modulus', 'PASSED'): 1})

    def test_manifest(self):
        response = self.client.get(f'/runs/{self.with_manifest.run_id}/manifest/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['seed'], 3)

    def test_missing_manifest(self):
        response = self.client.get(f'/runs/{self.failed.run_id}/manifest/')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_read_only(self):
        response = self.client.post('/runs/', {'subcommand': 'modulus', 'seed': 1}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
