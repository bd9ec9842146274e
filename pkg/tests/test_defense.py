"""Augmentation defense on the shape task, where class survives a channel remix."""

from ccpattack.ccp import CcpParams, CcpTrialPlan, Scheme, attack_dataset
from ccpattack.model import CcpAugmentation, TrainConfig, evaluate, init_model, small_cnn, train
from ccpattack.synthetic import train_test_split

ATTACK = CcpParams(scale=1.0, bias=0.0, scheme=Scheme.VARIABLE)


def ccp_v_mean(model, te, trials=10):
    return sum(evaluate(model, attack_dataset(te, CcpTrialPlan(ATTACK, 1, t))) for t in range(trials)) / trials


def test_augmented_beats_plain_on_shape_task():
    tr, te = train_test_split(100, 50, size=32, seed=1, task="shape")
    results = {}
    for name, aug in (("plain", None), ("augmented", CcpAugmentation(ATTACK, 0.5))):
        model = init_model(small_cnn(3), tr.image_shape, 1)
        train(model, tr, TrainConfig(epochs=15, seed=1, augmentation=aug))
        results[name] = (evaluate(model, te), ccp_v_mean(model, te))
    (plain_clean, plain_ccp), (aug_clean, aug_ccp) = results["plain"], results["augmented"]
    assert aug_ccp - plain_ccp >= 0.15, results
    assert aug_clean >= 0.85 and plain_clean >= 0.85, results
