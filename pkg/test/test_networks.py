import pytest
import torch
import torch.nn.functional as F

from utils.agent import N_ACTIONS, ShepherdAgent
from utils.networks import HIDDEN, Mlp, clone_mlp, flat_parameters, mlp_forward, soft_update


def test_shape_and_heads():
    net = Mlp(12, 5)
    assert net.dims == (12, *HIDDEN, 5)
    out = mlp_forward(net, torch.rand(4, 12))
    assert out.shape == (4, 5)
    soft = Mlp(8, N_ACTIONS, head="softmax", dropout_rate=0.0)
    probs = mlp_forward(soft, torch.rand(3, 8))
    torch.testing.assert_close(probs.sum(dim=-1), torch.ones(3))
    with pytest.raises(ValueError):
        Mlp(3, 1, head="tanh")
    with pytest.raises(ValueError):
        mlp_forward(net, torch.rand(2, 11))


def test_dropout_only_while_training():
    net = Mlp(6, 2, dropout_rate=0.5, seed=1)
    x = torch.rand(5, 6)
    torch.testing.assert_close(mlp_forward(net, x), mlp_forward(net, x))
    assert not torch.equal(mlp_forward(net, x, training=True), mlp_forward(net, x, training=True))
    assert not net.training


def test_zero_weights_give_zero_output():
    net = Mlp(4, 3)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    assert torch.count_nonzero(mlp_forward(net, torch.rand(7, 4))) == 0


def test_hand_computed_single_path():
    net = Mlp(1, 1, dropout_rate=0.0)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        net.layers[0].weight[0, 0] = 2.0
        net.layers[1].weight[0, 0] = 3.0
        net.layers[2].weight[0, 0] = 1.0
        net.layers[3].weight[0, 0] = 0.5
        net.layers[3].bias[0] = 1.0
    out = mlp_forward(net, torch.tensor([[2.0], [-1.0]]))
    torch.testing.assert_close(out, torch.tensor([[7.0], [1.0]]))


def test_mse_gradient_matches_finite_differences():
    torch.manual_seed(0)
    net = Mlp(5, 2, dropout_rate=0.0, seed=4)
    x = torch.rand(6, 5)
    y = torch.rand(6, 2)
    # input side, then the first layer through a functional view
    inputs = x.clone().requires_grad_(True)
    assert torch.autograd.gradcheck(lambda inp: F.mse_loss(net(inp), y), (inputs,))
    w0 = net.layers[0].weight.detach().clone().requires_grad_(True)

    def by_first_layer(w):
        h = F.relu(F.linear(x, w, net.layers[0].bias))
        for layer in net.layers[1:-1]:
            h = F.relu(layer(h))
        return F.mse_loss(net.layers[-1](h), y)

    assert torch.autograd.gradcheck(by_first_layer, (w0,))


def test_agent_losses_gradcheck():
    agent = ShepherdAgent(seed=2)
    states = torch.rand(4, 8, requires_grad=True)
    actions = F.one_hot(torch.tensor([0, 3, 6, 2]), N_ACTIONS).to(torch.float64)
    rewards = torch.rand(4, 1)
    next_states = torch.rand(4, 8)
    assert torch.autograd.gradcheck(lambda s: agent.critic_loss(s, actions, rewards, next_states), (states,))
    assert torch.autograd.gradcheck(lambda s: agent.actor_loss(s), (states,))


def test_copy_and_soft_update():
    a = Mlp(3, 2, seed=1)
    b = Mlp(3, 2, seed=2)
    before = flat_parameters(b).clone()
    soft_update(b, a, 0.0)
    torch.testing.assert_close(flat_parameters(b), before)
    soft_update(b, a, 1.0)
    torch.testing.assert_close(flat_parameters(b), flat_parameters(a))
    c = Mlp(3, 2, seed=3)
    soft_update(c, a, 0.25)
    torch.testing.assert_close(flat_parameters(c), 0.25 * flat_parameters(a) + 0.75 * flat_parameters(Mlp(3, 2, seed=3)))
    assert torch.equal(flat_parameters(clone_mlp(a)), flat_parameters(a))
    with pytest.raises(ValueError):
        Mlp(4, 2).copy_from(a)


def test_same_seed_same_init():
    assert torch.equal(flat_parameters(Mlp(7, 3, seed=5)), flat_parameters(Mlp(7, 3, seed=5)))
    assert not torch.equal(flat_parameters(Mlp(7, 3, seed=5)), flat_parameters(Mlp(7, 3, seed=6)))
