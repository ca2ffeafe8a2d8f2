"""Mollify the rough shear at shrinking radii and compare the resulting flows.

Run with ``python3 demos/rough_shear_limit.py`` (about a minute).  The shear
has a velocity gradient that blows up like ``|x2|^(-1/2)`` on a plane, so it is
not Lipschitz.  Its mollifications are smooth.  The distances between
consecutive mollified flow maps, transported densities and set measures
shrink as the radius is halved, which is the numerical face of the
uniqueness of the limiting flow.  The commutator norms shrink too.
"""
import roughflow as rf
from roughflow.flow import flow_convergence_study
from roughflow.geometry import box, box_set
from roughflow.transport import GridSpec, commutator_field, coordinate, rho_convergence_study, smooth_bump


def main():
    field = rf.rough_shear()
    eps = [0.1, 0.05, 0.025]
    slab = box_set([-0.5, -0.4, -0.3], [0.2, 0.3, 0.4], "slab")

    flow_d = flow_convergence_study(field, eps, 1.0, 0.0, 1000, 11, step_size=0.05)
    rho_d = rho_convergence_study(field, coordinate(0), 0.0, 1.0, eps, 1000, 11, step_size=0.05)
    rows, diffs = rf.rtt_limit_study(field, eps, 1.0, 0.0, slab, 2000, 11, step_size=0.05)

    print("eps     meas X(1,0,slab)   flow L2 diff   rho L2 diff   measure diff")
    for k, row in enumerate(rows):
        extra = ""
        if k:
            extra = f"   {flow_d[k - 1]:.2e}       {rho_d[k - 1]:.2e}      {diffs['image_jacobian'][k - 1]:.2e}"
        print(f"{row.eps:<7} {row.image_jacobian.value:.6f}        {extra}")

    grid = GridSpec(box([-1.1] * 3, [1.1] * 3), 24)
    rho = smooth_bump([0.2, 0.1, 0.0], 0.6)
    print("\ncommutator L1 norms on a 24^3 grid")
    for e in eps:
        print(f"  eps={e:<6} {commutator_field(field, rho, e, 0.0, grid).l1_norm():.3e}")


if __name__ == "__main__":
    main()
