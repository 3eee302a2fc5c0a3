"""
Parameter counts of the multi-view network
==========================================

Builds the binary model on every standard backbone (shared body, four views)
and compares the counts with the closed-form head size.
"""
from mvsnet.backbones import REGISTRY
from mvsnet.model import BackboneSpec, HeadConfig, MVSNet, count_parameters, head_parameter_count

print(f"{'backbone':<14}{'trainable':>14}{'non-trainable':>15}{'total':>14}{'head':>13}")
for name, entry in REGISTRY.items():
    if not entry.standard:
        continue
    model = MVSNet(BackboneSpec(name), HeadConfig(num_views=4, num_classes=2))
    c = count_parameters(model)
    head = head_parameter_count(entry.d_view, 4, 2)
    print(f"{name:<14}{c.trainable:>14,}{c.non_trainable:>15,}{c.total:>14,}{head:>13,}")

# the frozen BiT body trains nothing but the head
print(head_parameter_count(2048, 4, 2))
# single view: n = floor(2048 / 6) = 341
print(head_parameter_count(2048, 1, 2))
