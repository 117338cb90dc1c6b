import numpy as np
from django.core.management.base import BaseCommand, CommandError

from averaging.core import softmax_rows
from averaging.posterior import ElboObjective, MixtureObjective, PosteriorNet, grad_check


class Command(BaseCommand):
    help = 'Compare analytic and finite-difference gradients of the ELBO and mixture objectives'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--rows', type=int, default=6)
        parser.add_argument('--inputs', type=int, default=3)
        parser.add_argument('--models', type=int, default=4)
        parser.add_argument('--hidden', type=int, nargs='+', default=[6, 5, 4])
        parser.add_argument('--lambda-kl', type=float, default=0.05)
        parser.add_argument('--objective', choices=['elbo', 'moe', 'both'], default='both')
        parser.add_argument('--tolerance', type=float, default=1e-4, help='Max relative error allowed')

    def handle(self, *args, **options):
        if min(options['rows'], options['inputs'], options['models'], *options['hidden']) < 1:
            raise CommandError('rows, inputs, models and hidden sizes must be >= 1', returncode=1)
        rng = np.random.default_rng(options['seed'])
        n, d, m = options['rows'], options['inputs'], options['models']
        X = rng.normal(size=(n, d))
        loglik = -rng.exponential(size=(n, m))
        priors = softmax_rows(rng.normal(size=(n, m)))

        # random rather than zero output layer so every coordinate carries gradient
        net = PosteriorNet(d, m, hidden=options['hidden'], seed=options['seed'], zero_output=False)
        objectives = {
            'elbo': ElboObjective(loglik, priors, options['lambda_kl']),
            'moe': MixtureObjective(loglik),
        }
        selected = list(objectives) if options['objective'] == 'both' else [options['objective']]

        failed = []
        for name in selected:
            error = grad_check(net, X, objectives[name])
            self.stdout.write(f'{name}: max relative error {error:.3e} over {net.parameter_count} parameters')
            if not error <= options['tolerance']:
                failed.append(name)
        if failed:
            raise CommandError(f'Gradient check failed for {failed}', returncode=2)
        self.stdout.write(self.style.SUCCESS('Analytic gradients match finite differences'))
