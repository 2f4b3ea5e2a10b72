"""
Component smoke test for the vacuum INS harness
"""

import logging
import sys
import tempfile
from pathlib import Path

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)


def check_components(work_dir: Path) -> bool:
    """Exercise every component once on a tiny grid"""
    logger.info("=" * 50)
    logger.info("Testing Vacuum INS Harness Components")
    logger.info("=" * 50)

    # Test 1: Configuration
    logger.info("\n1. Testing Configuration...")
    try:
        from config import SOLVER_CONFIG, GRID_CONFIG, ENSEMBLE_CONFIG
        logger.info("✓ Configuration loaded successfully")
        logger.info(f"  - Solver config: {SOLVER_CONFIG}")
        logger.info(f"  - Grid config: {GRID_CONFIG}")
        logger.info(f"  - Ensemble seed: {ENSEMBLE_CONFIG['seed']}")
    except Exception as e:
        logger.error(f"✗ Configuration test failed: {e}")
        return False

    # Test 2: Fields
    logger.info("\n2. Testing Fields...")
    try:
        from fields import Grid, leray_project, random_vector_field, spectral_gradient, lp_norm
        import numpy as np
        grid = Grid(16, 2)
        v = random_vector_field(grid, np.random.default_rng(0), kmax=4)
        v_df, _ = leray_project(v)
        divergence = lp_norm(spectral_gradient(v_df, 'div'), 2)
        logger.info(f"✓ Leray projection leaves divergence {divergence:.2e}")
    except Exception as e:
        logger.error(f"✗ Fields test failed: {e}")
        return False

    # Test 3: Solver
    logger.info("\n3. Testing Solver...")
    try:
        from scenarios import build_scenario
        from solver import SolverConfig
        from diagnostics import run_with_diagnostics, energy_residual
        cfg = SolverConfig(n=16, dt=1e-3, T_end=5e-3, mu=0.05)
        trajectory = run_with_diagnostics(build_scenario('drop', cfg.grid), cfg)
        logger.info(f"✓ Drop run finished with energy residual {energy_residual(trajectory).max():.2e}")
    except Exception as e:
        logger.error(f"✗ Solver test failed: {e}")
        return False

    # Test 4: Inequalities
    logger.info("\n4. Testing Inequalities...")
    try:
        from inequalities import FieldEnsemble, run_ensemble
        report = run_ensemble('weighted_poincare', FieldEnsemble(count=4, n=16, kmax=4), workers=1)
        logger.info(f"  - Violations: {len(report.violations)}")
        logger.info("✓ Inequality ensemble evaluated")
    except Exception as e:
        logger.error(f"✗ Inequality test failed: {e}")
        return False

    # Test 5: Lagrangian and twisted divergence
    logger.info("\n5. Testing Lagrangian Tools...")
    try:
        from lagrangian import shear_map, deformation_inverse
        from twisted_div import TwistedProblem, solve_twisted, shear_matrix_field
        _, _, error = deformation_inverse(shear_map(grid, 0.01), terms=1)
        R = random_vector_field(grid, np.random.default_rng(1), kmax=4)
        solution = solve_twisted(TwistedProblem(shear_matrix_field(grid, 0.1), [R]))
        logger.info(f"  - Neumann error: {error:.2e}")
        logger.info(f"  - Twisted residual: {solution.residuals[0]:.2e}")
        logger.info("✓ Lagrangian tools working")
    except Exception as e:
        logger.error(f"✗ Lagrangian test failed: {e}")
        return False

    # Test 6: Config, harness and report
    logger.info("\n6. Testing Harness Integration...")
    try:
        from scenario_config import parse_config
        from ins_harness import run_scenario
        from report_workbook import write_summary_workbook
        cfg = parse_config("[scenario]\nname = \"rest\"\nn = 16\n[solver]\nT_end = 0.005\n")
        result = run_scenario(cfg, work_dir / 'rest')
        summary = write_summary_workbook(work_dir / 'rest')
        logger.info(f"  - Run passed: {result['passed']}")
        logger.info(f"  - Workbook written: {summary['success']}")
        if not (result['passed'] and summary['success']):
            raise RuntimeError(result.get('error') or summary.get('error') or 'checks failed')
        logger.info("✓ Integration test completed successfully")
    except Exception as e:
        logger.error(f"✗ Integration test failed: {e}")
        return False

    logger.info("\n" + "=" * 50)
    logger.info("All component tests completed successfully!")
    logger.info("=" * 50)
    return True


def test_components(tmp_path):
    assert check_components(tmp_path)


def main():
    """Main test function"""
    logger.info("Starting Vacuum INS Harness System Tests")
    with tempfile.TemporaryDirectory() as work_dir:
        if not check_components(Path(work_dir)):
            logger.error("Component tests failed. Please check the errors above.")
            sys.exit(1)

    logger.info("\n🎉 All tests passed! The harness is ready to use.")
    logger.info("\nTo start:")
    logger.info("1. Run: python ins_harness.py run scenarios/taylor_green.toml")
    logger.info("2. Run: python ins_harness.py ineq scenarios/inequalities.toml")


if __name__ == "__main__":
    main()
