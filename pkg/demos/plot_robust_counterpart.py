"""
How much capacity does protection cost?
=======================================

Each VM declares a nominal demand and a deviation (a fraction Delta of the
nominal). A node is sized for the nominal load plus the Gamma largest
deviations of the VMs it hosts, so at most Gamma of them may exceed their
nominal demand at the same time without overloading it.
"""

from robust_slicing.robins import top_gamma_sum, worst_case_node_load
from robust_slicing.topology import ResourceVector
from robust_slicing.workload import VmSpec

# three VMs of the small, medium and large catalogue types
vms = [VmSpec(1, ResourceVector(1, 2, 120)), VmSpec(2, ResourceVector(2, 4, 120)),
       VmSpec(3, ResourceVector(4, 16, 120))]

# CPU sizing as the protection level grows, at 10% deviation
for gamma in range(5):
    load = worst_case_node_load(vms, gamma, 0.1)
    print(f"gamma={gamma}: worst-case CPU {load.cpu:.1f} cores (nominal 7)")

# past the population size nothing more is added
print(top_gamma_sum([0.4, 0.2, 0.1], 3) == top_gamma_sum([0.4, 0.2, 0.1], 10))

# the same budget at larger deviations
for delta in (0.0, 0.1, 0.3):
    print(f"delta={delta:.0%}: {worst_case_node_load(vms, 1, delta).cpu:.1f} cores")
