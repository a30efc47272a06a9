"""Walk through the HOI label algebra on a small hand-built taxonomy.

An interaction category is a (verb, object) pair. Composing an object label
with a verb label projects both into category space and intersects them, so
only pairs the taxonomy actually contains survive.
"""
import numpy as np

from hoicompose import Taxonomy, compose_label, decouple_object, decouple_verb, one_hot

verbs = ["hold", "drink-from", "type-on"]
objects = ["cup", "keyboard"]
pairs = [
    (0, 0),  # hold cup
    (1, 0),  # drink-from cup
    (0, 1),  # hold keyboard
    (2, 1),  # type-on keyboard
]
tax = Taxonomy.build(verbs, objects, pairs)

print("categories:")
for c, (v, o) in enumerate(tax.hoi_pairs):
    print(f"  {c}: {verbs[v]} {objects[o]}")

# compose: object one-hot x verb one-hot -> multi-hot over categories
y = compose_label(one_hot(2, 0), one_hot(3, 1), tax)
print("\ndrink-from x cup ->", y, "(category 1 only)")

# an invalid combination composes to the all-zero label and would be discarded
y_bad = compose_label(one_hot(2, 1), one_hot(3, 1), tax)
print("drink-from x keyboard ->", y_bad, "(no such pair)")

# multi-hot verb input: every valid pairing with the object lights up
both = decouple_verb(np.array([1, 1, 0, 0], dtype=np.int8), tax)
y_multi = compose_label(one_hot(2, 0), both, tax)
print("{hold, drink-from} x cup ->", y_multi)

# decoupling goes the other way: category label -> verb / object factors
label = np.array([0, 0, 1, 1], dtype=np.int8)  # hold keyboard + type-on keyboard
print("\nlabel", label, "decouples to verbs", decouple_verb(label, tax),
      "and objects", decouple_object(label, tax))

# the round trip can only add valid pairs, never drop a labeled one
recomposed = compose_label(decouple_object(label, tax), decouple_verb(label, tax), tax)
assert ((label == 1) <= (recomposed == 1)).all()
print("recomposed:", recomposed)
