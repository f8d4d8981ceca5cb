from os import path

from environs import Env

env = Env()
env.read_env()

debug = env.bool('DEBUG', False)
log_level = 'DEBUG' if debug else env.str('LOG_LEVEL', 'INFO').upper()

root_dir = path.dirname(path.dirname(path.abspath(__file__)))
logs_dir = path.join(root_dir, 'logs')
default_config_path = env.str('NEMATIC_CONFIG', path.join(root_dir, 'config.yaml'))
default_out_dir = env.str('NEMATIC_OUT_DIR', path.join(root_dir, 'output'))

# desk-scale acceptance runs take minutes, the doctest runner skips them by default
run_slow_checks = env.bool('RUN_SLOW_CHECKS', False)

# -------------------------------------- 数值配置 -------------------------------------- #
# quadtree levels below the root grid; node keys are integers on the finest possible grid
max_refine_level = env.int('NEMATIC_MAX_REFINE_LEVEL', 12)
volume_quadrature_points = env.int('NEMATIC_VOLUME_QUADRATURE', 4)
edge_quadrature_points = env.int('NEMATIC_EDGE_QUADRATURE', 4)
# cells per assembly batch; element Hessians take cells * 1296 floats
assembly_chunk_cells = env.int('NEMATIC_ASSEMBLY_CHUNK', 512)
# in-plane director blocks up to this size get a dense eigensolve, larger ones use Lanczos
dense_eigen_limit = env.int('NEMATIC_DENSE_EIGEN_LIMIT', 4000)
