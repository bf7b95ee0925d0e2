# Regenerates tests/glm_frozen.inc:  python3 tools/make_glm_reference.py | grep -v "grad:" > tests/glm_frozen.inc
import numpy as np
import statsmodels.api as sm

rng = np.random.default_rng(20250816)

def emit(name, arr):
    flat = np.asarray(arr).ravel()
    body = ", ".join("%.17g" % v for v in flat)
    print(f"static const double {name}[] = {{{body}}};")

# ---- logistic: n=40, 2 covariates + intercept, integer-ish data for stability
n = 40
x1 = np.round(rng.normal(size=n), 3)
x2 = np.round(rng.uniform(-1, 1, size=n), 3)
eta = -0.3 + 0.8 * x1 - 1.1 * x2
y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
X = np.column_stack([np.ones(n), x1, x2])
fit = sm.Logit(y, X).fit(disp=0, tol=1e-12)
print("// logistic")
emit("kLogitX1", x1)
emit("kLogitX2", x2)
emit("kLogitY", y)
emit("kLogitCoef", fit.params)

# weighted logistic on the same data
w = np.round(rng.uniform(0.5, 2.0, size=n), 3)
fitw = sm.GLM(y, X, family=sm.families.Binomial(), freq_weights=w).fit(tol=1e-12)
emit("kLogitW", w)
emit("kLogitCoefW", fitw.params)

# ---- multinomial: n=60, 3 categories, 1 covariate + intercept, ref category 0
n = 60
z = np.round(rng.normal(size=n), 3)
lp = np.column_stack([np.zeros(n), 0.4 + 0.9 * z, -0.2 - 0.7 * z])
pr = np.exp(lp - lp.max(axis=1, keepdims=True))
pr /= pr.sum(axis=1, keepdims=True)
cat = np.array([rng.choice(3, p=p) for p in pr]).astype(int)
Xm = np.column_stack([np.ones(n), z])
fitm = sm.MNLogit(cat, Xm).fit(disp=0, method="newton", tol=1e-12)
print("// multinomial (categories 0,1,2; coefficients for 1 and 2 vs 0)")
emit("kMnZ", z)
emit("kMnCat", cat.astype(float))
emit("kMnCoef", fitm.params.T)  # rows: category 1, category 2; cols: intercept, z

# ---- gamma log link: n=50, 2 covariates
n = 50
u1 = np.round(rng.normal(size=n), 3)
u2 = np.round(rng.uniform(0, 1, size=n), 3)
mu = np.exp(0.5 + 0.3 * u1 - 0.6 * u2)
yg = rng.gamma(shape=4.0, scale=mu / 4.0)
yg = np.round(yg, 6)
Xg = np.column_stack([np.ones(n), u1, u2])
fitg = sm.GLM(yg, Xg, family=sm.families.Gamma(link=sm.families.links.Log())).fit(tol=1e-12)
print("// gamma log link")
emit("kGamU1", u1)
emit("kGamU2", u2)
emit("kGamY", yg)
emit("kGamCoef", fitg.params)

# ---- weighted least squares with exact rational answer is in the C++ test already

# --- tightness check: mean score at reported optimum
import numpy as np
pl = 1/(1+np.exp(-(X @ fit.params)))
print("logit grad:", np.abs(X.T @ (y - pl) / len(y)).max())
plw = 1/(1+np.exp(-(X @ fitw.params)))
print("logit w grad:", np.abs(X.T @ (w * (y - plw)) / len(y)).max())
B = fitm.params  # d x (K-1)
lp = np.column_stack([np.zeros(len(z)), Xm @ B])
pr = np.exp(lp - lp.max(axis=1, keepdims=True)); pr /= pr.sum(axis=1, keepdims=True)
gmax = 0.0
for c in (1, 2):
    gc = Xm.T @ ((cat == c).astype(float) - pr[:, c]) / len(z)
    gmax = max(gmax, np.abs(gc).max())
print("mnlogit grad:", gmax)
mug = np.exp(Xg @ fitg.params)
print("gamma grad:", np.abs(Xg.T @ (yg/mug - 1) / len(yg)).max())
