"""Register-free programs with hand-computed values.

Shared by the kernel tests and the confluence acceptance check.
"""

PURE_PROGRAMS = [
    ("(app (lam x x) 5)", 5),
    ("42", 42),
    ("true", True),
    ("(+ 2 3)", 5),
    ("(- 2 7)", -5),
    ("(* 6 7)", 42),
    ("(< 1 2)", True),
    ("(<= 3 2)", False),
    ("(= 4 4)", True),
    ("(= 1 true)", False),
    ("(not false)", True),
    ("(and true false)", False),
    ("(or false true)", True),
    ("(let x 3 (* x x))", 9),
    ("(app (lam x (lam y (- x y))) 10 4)", 6),
    ("(let k (lam x (lam y x)) (app k 1 2))", 1),
    ("(let twice (lam f (lam x (app f (app f x)))) (app twice (lam n (+ n 3)) 0))", 6),
    ("(set 3 1 2)", frozenset({1, 2, 3})),
    ("(union (set 1 2) (set 2 5))", frozenset({1, 2, 5})),
    ("(member 2 (set 1 2))", True),
    ("(size (set))", 0),
    ("(map (lam x (* 2 x)) (set 1 2))", frozenset({2, 4})),
    ("(filter (lam x (= 0 (- x (* 2 1)))) (set 1 2 3))", frozenset({2})),
    ("(size (map (lam x 0) (set 1 2 3)))", 1),
    ("(let s (set 1 2 3 4) (size (filter (lam x (< 2 x)) s)))", 2),
    # Church numeral 3 applied to successor
    ("(let three (lam f (lam x (app f (app f (app f x))))) (app three (lam n (+ n 1)) 0))", 3),
    # shadowing
    ("(let x 1 (let x 2 x))", 2),
    ("(app (lam x (app (lam y x) 9)) 8)", 8),
]
