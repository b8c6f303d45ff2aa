import json
import logging
from pathlib import Path

from django.db.models import Count
from rest_framework import viewsets, status, permissions
from rest_framework.decorators import action
from rest_framework.response import Response

from .models import ExperimentRun
from .serializers import ExperimentRunSerializer

logger = logging.getLogger(__name__)


class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    """Recorded harness runs. Filter with ?subcommand= and ?status=."""
    serializer_class = ExperimentRunSerializer
    permission_classes = [permissions.AllowAny]

    def get_queryset(self):
        queryset = ExperimentRun.objects.all()
        subcommand = self.request.query_params.get('subcommand')
        run_status = self.request.query_params.get('status')
        if subcommand:
            queryset = queryset.filter(subcommand=subcommand)
        if run_status:
            queryset = queryset.filter(status=run_status.upper())
        return queryset

    @action(detail=False)
    def stats(self, request):
        rows = self.get_queryset().values('subcommand', 'status').annotate(count=Count('run_id')).order_by('subcommand', 'status')
        return Response(list(rows))

    @action(detail=True)
    def manifest(self, request, pk=None):
        run = self.get_object()
        path = Path(run.out_dir) / 'manifest.json'
        if not path.exists():
            logger.warning(f"manifest missing for run {run.run_id}: {path}")
            return Response({'error': 'manifest not found'}, status=status.HTTP_404_NOT_FOUND)
        return Response(json.loads(path.read_text()))
