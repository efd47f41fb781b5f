import sys
from argparse import ArgumentParser, ArgumentTypeError, Namespace
from os import path, mkdir

from pandas import DataFrame
from pydantic import ValidationError

from src.config import ReportConfig, SolverSettings, read_report_config_file
from src.errors import AsymptoticsError, ProblemNotFoundError
from src.expansion import build_expansion
from src.pencil import classify_and_verify
from src.problems import list_problems, registry_get
from src.regular import solve_reduced
from src.util import RunReport, chronometer, get_and_create_logs_dir, log_message, parse_float_list, save_frame
from src.validation import convergence_study, residuals


def create_and_save_validation_report(config: ReportConfig, save_dir: str | None = None) -> bool:
    """
    Run every configured convergence study and save one combined CSV report.

    :return: True if every run completed and met its expected orders.
    """
    # create logs directory
    dir_ts_logs = path.join(get_and_create_logs_dir(), config.resolved_report_name)
    if config.create_log_files:
        mkdir(dir_ts_logs)

    # constant strings
    str_run = 'run'
    str_eps = 'epsilon'
    str_error = 'max_error'
    str_interior = 'interior_residual'
    str_boundary = 'boundary_residual'
    str_slope = 'error_slope'
    str_time = 'time'
    report = RunReport(name=config.resolved_report_name)
    report.add_properties([str_run, str_eps, str_error, str_interior, str_boundary, str_slope, str_time])
    all_passed = True
    for run_config in config.run_configs:
        log_file = open(path.join(dir_ts_logs, f'{run_config.resolved_name}.log'), 'w') \
            if config.create_log_files else None
        try:
            settings = run_config.resolved_settings(config.default_settings)
            problem = registry_get(run_config.problem, T=run_config.T)
            study, elapsed = chronometer(convergence_study, problem, run_config.order, run_config.epsilons, settings)
        except (AsymptoticsError, ValidationError) as e:
            log_message('Report', f'Error running {run_config.resolved_name}: {e}', log_file)
            all_passed = False
            continue
        finally:
            if log_file is not None:
                log_file.close()
        all_passed = all_passed and study.passed()
        slope = study.slope if study.slope is not None else float('nan')
        for row in study.to_frame().itertuples(index=False):
            report.add_run_data(run_config.problem, run_config.order)
            report.add_property_values(str_run, run_config.resolved_name)
            report.add_property_values(str_eps, row.epsilon)
            report.add_property_values(str_error, row.max_error)
            report.add_property_values(str_interior, row.interior_residual)
            report.add_property_values(str_boundary, row.boundary_residual)
            report.add_property_values(str_slope, slope)
            report.add_property_values(str_time, elapsed)
        log_message('Report', study.summary())
    try:
        saved = report.save_csv(save_dir)
        log_message('Report', f'saved {saved}')
    except RuntimeError as e:
        log_message('Report', f'Nothing saved: {e}')
        all_passed = False
    return all_passed


def _settings(args: Namespace) -> SolverSettings:
    return SolverSettings().merged(
        tol=getattr(args, 'tol', None),
        layer_nodes=getattr(args, 'grid_nodes', None),
        tau_max=getattr(args, 'tau_max', None),
        jobs=getattr(args, 'jobs', None),
        verbose=not getattr(args, 'quiet', False))


def _analyze(args: Namespace) -> int:
    problem = registry_get(args.problem, T=args.T)
    settings = _settings(args)
    reduced = solve_reduced(problem, degree=settings.degree, tol=settings.tol, verbose=settings.verbose)
    _, report = classify_and_verify(problem, reduced, t_floor=settings.t_floor, grid_size=settings.structure_grid)
    print(report.to_text())
    if args.out:
        log_message('Analyze', f'saved {report.to_csv(args.out, f"{problem.name()}-structure")}')
    return 0 if report.passed else 1


def _expand(args: Namespace) -> int:
    problem = registry_get(args.problem, T=args.T)
    bundle = build_expansion(problem, args.order, _settings(args))
    print(bundle.constants.to_frame().to_string(index=False))
    if args.out:
        for saved in bundle.save_csv(args.out):
            log_message('Expand', f'saved {saved}')
        for eps in args.eps or []:
            saved = save_frame(bundle.sample_frame(eps), args.out, f'{problem.name()}-l{args.order}-eps{eps:g}')
            log_message('Expand', f'saved {saved}')
    return 0


def _validate(args: Namespace) -> int:
    problem = registry_get(args.problem, T=args.T)
    report = convergence_study(problem, args.order, args.eps, _settings(args))
    print(report.summary())
    if args.out:
        log_message('Validate', f'saved {report.to_csv(args.out)}')
    return 0 if report.passed() else 1


def _residuals(args: Namespace) -> int:
    problem = registry_get(args.problem, T=args.T)
    settings = _settings(args)
    bundle = build_expansion(problem, args.order, settings)
    rows = {'epsilon': [], 'interior_residual': [], 'boundary_residual': []}
    for eps in args.eps:
        interior, boundary = residuals(problem, bundle, eps, settings.interior_margin, settings.probe_count)
        rows['epsilon'].append(eps)
        rows['interior_residual'].append(interior)
        rows['boundary_residual'].append(boundary)
    df = DataFrame(rows)
    print(df.to_string(index=False))
    if args.out:
        log_message('Residuals', f'saved {save_frame(df, args.out, f"{problem.name()}-l{args.order}-residuals")}')
    return 0


def _list_problems(args: Namespace) -> int:
    for name in list_problems():
        print(name)
    return 0


def _run(args: Namespace) -> int:
    report_config = read_report_config_file(config_file_path=args.config_file)
    return 0 if create_and_save_validation_report(config=report_config, save_dir=args.out) else 1


def _study_eps(text: str) -> list[float]:
    """
    :raises ArgumentTypeError: unless the list holds at least three positive, strictly decreasing values.
    """
    try:
        values = parse_float_list(text)
    except ValueError as e:
        raise ArgumentTypeError(str(e)) from e
    if len(values) < 3:
        raise ArgumentTypeError('at least three values of eps are needed for a slope')
    if any(v <= 0 for v in values) or any(b >= a for a, b in zip(values, values[1:])):
        raise ArgumentTypeError('eps values must be positive and strictly decreasing')
    return values


def create_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='python -m src.main',
                            description='Boundary-function asymptotics of singularly perturbed DAEs with a '
                                        'turning point.')
    commands = parser.add_subparsers(dest='command', required=True)

    problem_args = ArgumentParser(add_help=False)
    problem_args.add_argument('--problem', required=True, help='name of a built-in problem (see list-problems)')
    problem_args.add_argument('--T', type=float, default=None, help='horizon overriding the problem default')
    problem_args.add_argument('--tol', type=float, default=None, help='tolerance of the nonlinear solves')
    problem_args.add_argument('--out', default=None, help='directory receiving the CSV output')
    problem_args.add_argument('--quiet', action='store_true', help='suppress progress messages')

    expansion_args = ArgumentParser(add_help=False)
    expansion_args.add_argument('--order', type=int, default=0, help='order l of the expansion')
    expansion_args.add_argument('--grid-nodes', type=int, default=None, help='nodes of each layer grid')
    expansion_args.add_argument('--tau-max', type=float, default=None, help='truncation of the layer domains')

    analyze = commands.add_parser('analyze', parents=[problem_args], help='pencil structure report')
    analyze.set_defaults(handler=_analyze)

    expand = commands.add_parser('expand', parents=[problem_args, expansion_args],
                                 help='build the expansion and export its terms')
    expand.add_argument('--eps', type=parse_float_list, default=None,
                        help='comma separated values of eps at which to sample the expansion')
    expand.set_defaults(handler=_expand)

    validate = commands.add_parser('validate', parents=[problem_args, expansion_args],
                                   help='convergence study against the reference solver')
    validate.add_argument('--eps', type=_study_eps, required=True,
                          help='at least three comma separated, strictly decreasing eps')
    validate.add_argument('--jobs', type=int, default=None, help='parallel reference solves')
    validate.set_defaults(handler=_validate)

    residual = commands.add_parser('residuals', parents=[problem_args, expansion_args],
                                   help='equation and boundary residuals of the expansion')
    residual.add_argument('--eps', type=parse_float_list, required=True, help='comma separated eps')
    residual.set_defaults(handler=_residuals)

    listing = commands.add_parser('list-problems', help='list the built-in problems')
    listing.set_defaults(handler=_list_problems)

    run = commands.add_parser('run', help='batch validation from a JSON configuration file')
    run.add_argument('config_file', help='path to the file containing run configurations')
    run.add_argument('--out', default=None, help='directory receiving the report')
    run.set_defaults(handler=_run)
    return parser


def run_cli(argv: list[str]) -> int:
    """
    :return: 0 on success, 1 if a structural condition is violated or a report fails, 2 on usage errors.
    """
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        return args.handler(args)
    except (ProblemNotFoundError, ValidationError, FileNotFoundError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 2
    except AsymptoticsError as e:
        print(f'{type(e).__name__}: {e}', file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == '__main__':
    main()
