from django.core.management.base import CommandError

from cli.base import ReMPCommand
from config.exceptions import EXIT_RUNTIME
from objective.gradcheck import run_gradcheck
from objective.serializers import GradientCheckResultSerializer
from training.serializers import render_json


class Command(ReMPCommand):
    help = (
        "Check analytic gradients against central finite differences on the fixed tiny episode "
        "for every schedule arm, repulsion setting (off, on, query-block minimum) and both local metrics."
    )

    def run(self, config):
        results = run_gradcheck(config.seed)
        for result in results:
            status = "ok" if result.passed else "FAILED"
            self.stdout.write(f"{status:6} {result.case} max_rel_error={result.max_rel_error:.3e}")
        path = config.output_dir / "gradcheck.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(render_json(GradientCheckResultSerializer, results, many=True) + b"\n")
        failed = [result.case for result in results if not result.passed]
        if failed:
            raise CommandError(f"gradient check failed for {len(failed)} case(s): {', '.join(failed)}",
                               returncode=EXIT_RUNTIME)
