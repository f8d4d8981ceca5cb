
if __name__ == '__main__':
    import copy
    import types
    import doctest
    from nematic_amr import (
        common,
        estimator,
        exception,
        experiment_config,
        fem,
        main,
        mesh,
        metrics,
        output,
        physics,
        problems,
        settings,
        solver,
    )
    from nematic_amr.acceptance import checks

    global_var = copy.copy(globals())
    for k, v in global_var.items():
        if not isinstance(v, types.ModuleType):
            continue
        if not v.__package__.startswith('nematic_amr'):
            continue
        # 验收检查要跑几分钟
        if v is checks and not settings.run_slow_checks:
            print(f'skip {v.__name__}, set RUN_SLOW_CHECKS=1 to run it')
            continue
        test_results = doctest.testmod(v)
        if test_results.failed != 0:
            raise Exception(f'{v.__name__}: {test_results.failed} doctest(s) failed')
