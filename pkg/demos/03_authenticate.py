# Training transmit-state classifiers on clean traffic, then catching an
# impersonating ECU and an added device.

from canoa import auth, scenario
from canoa.bus import AttackScenario, build_network, inject, reference_config, run

cfg = reference_config()
clean = run(build_network(cfg), 5.0, seed=1)
models = scenario.train(clean, cfg, seed=1)
for ecu, m in models.items():
    print(f"{ecu:7s} training loss {m.loss_history[0]:.3f} -> {m.loss_history[-1]:.4f}")

# INFO starts sending the brake frame 0x0B0 at 50 Hz after one second.
attack = AttackScenario("impersonation", "INFO", 0x0B0, 1.0, 50.0)
test = run(inject(build_network(cfg), attack), 10.0, seed=2)
verdicts = scenario.authenticate(test, cfg, models, seed=2)
m = auth.evaluate(verdicts, scenario.spoofed_flags(test))
print(f"\nimpersonation: {len(verdicts)} frames, FPR {m.fpr:.4f}, recall {m.recall:.4f}")

spoof = next(v for v, ev in zip(verdicts, test.log) if ev.spoofed)
real = next(v for v, ev in zip(verdicts, test.log) if ev.frame.id == 0x0B0 and not ev.spoofed)
for name, v in (("genuine", real), ("spoofed", spoof)):
    print(f"  {name} 0x0B0: p(BRAKE sent)={v.p_claimed:.3f}, best other={v.p_others:.3f} -> {v.decision}")

# A device nobody has a probe on: no ECU's trace shows the transmission.
ghost = AttackScenario("added_device", "GHOST", 0x0A0, 0.5, 40.0)
res = run(inject(build_network(cfg), ghost), 5.0, seed=3)
vs = scenario.authenticate(res, cfg, models, seed=3)
caught = [v.decision for v, ev in zip(vs, res.log) if ev.sender == "GHOST"]
print(f"\nadded device: {caught.count(auth.ALERT)}/{len(caught)} GHOST frames alerted")

# Sweeping the threshold traces out the ROC curve.
for theta, fpr, tpr in auth.roc(verdicts, scenario.spoofed_flags(test), [-0.5, 0.0, 0.5, 0.9, 0.99]):
    print(f"  theta {theta:5.2f}: FPR {fpr:.4f}  TPR {tpr:.4f}")
