'''
Alternating estimator/selector training

Every stage first trains the estimator on structures drawn from the current
sampler p, then trains the selector against the updated estimator, and
finally replaces p with the selector. Stage 1 draws from a mixture that
favours the full model.
'''

import numpy as np

from deep_elastic.data import interleave
from deep_elastic.display import Display
from deep_elastic.errors import ConfigError, ContractError, NumericError
from deep_elastic.estimator import (ModelStructure, active_masks, build_estimator, dense_forward, forward_rows,
                                    structure_costs)
from deep_elastic.objective import estimator_update, selector_gradient_estimate, structure_penalties
from deep_elastic.optim import adam, optimizer_step, sgd
from deep_elastic.selector import (DEFAULT_HIDDEN_WIDTH, build_selector, distribute, sample_structure,
                                   sample_structures, uniform_structure)
from deep_elastic.tensor import backward, cross_entropy, cross_entropy_values, gradients

ESTIMATOR_PHASE = 'estimator'
SELECTOR_PHASE = 'selector'
PHASES = (ESTIMATOR_PHASE, SELECTOR_PHASE)

INITIAL_DISTRIBUTIONS = ('mixture', 'uniform', 'selector')

DTYPES = {
    'float32': np.float32,
    'float64': np.float64,
}


class TrainConfig(object):

    DEFAULTS = {
        'rho': 0.1,
        'tau': 0.75,
        'epsilon': 0.1,
        # Multiplies epsilon once per stage
        'epsilon_decay': 0.5,
        'sample_count': 4,
        'stages': 3,
        # Hard cap on the epochs of one phase
        'epochs_per_phase': 20,
        # Defaults to epochs_per_phase; 0 skips selector training
        'selector_epochs': None,
        'patience': 2,
        'min_improvement': 0.001,
        'batch_size': 64,
        'lr_est': 0.1,
        'lr_sel': 1e-5,
        'momentum': 0.9,
        'lr_decay_factor': 10.0,
        'baseline': None,
        # Centre each reward on the other samples of the same example
        'leave_one_out': False,
        'initial_distribution': 'mixture',
        'dtype': 'float32',
        'seed': 0,
    }

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.DEFAULTS))
        if unknown:
            raise ConfigError('unknown training options: %s' % ', '.join(unknown))
        values = dict(self.DEFAULTS)
        values.update(kwargs)
        for key, value in values.items():
            setattr(self, key, value)
        self.validate()

    def __repr__(self):
        return '<TrainConfig %s>' % ' '.join('%s=%r' % (k, getattr(self, k)) for k in sorted(self.DEFAULTS))

    def _check(self, key, ok, msg):
        if not ok:
            raise ConfigError('%s, got %r' % (msg, getattr(self, key)), key='train.%s' % key)

    def validate(self):
        self._check('rho', self.rho >= 0, 'must be non-negative')
        for key in ('tau', 'epsilon', 'epsilon_decay'):
            self._check(key, 0 <= getattr(self, key) <= 1, 'must be in [0, 1]')
        for key in ('sample_count', 'stages', 'epochs_per_phase', 'batch_size', 'patience'):
            self._check(key, int(getattr(self, key)) >= 1, 'must be at least 1')
        if self.selector_epochs is not None:
            self._check('selector_epochs', int(self.selector_epochs) >= 0, 'must be non-negative')
        self._check('min_improvement', self.min_improvement >= 0, 'must be non-negative')
        for key in ('lr_est', 'lr_sel'):
            self._check(key, getattr(self, key) > 0, 'must be positive')
        self._check('momentum', 0 <= self.momentum < 1, 'must be in [0, 1)')
        self._check('lr_decay_factor', self.lr_decay_factor > 1, 'must be greater than 1')
        if self.leave_one_out:
            self._check('sample_count', int(self.sample_count) >= 2, 'must be at least 2 with leave_one_out')
            self._check('baseline', self.baseline is None, 'cannot be combined with leave_one_out')
        self._check('initial_distribution', self.initial_distribution in INITIAL_DISTRIBUTIONS,
                    'must be one of %s' % ', '.join(INITIAL_DISTRIBUTIONS))
        self._check('dtype', self.dtype in DTYPES, 'must be one of %s' % ', '.join(sorted(DTYPES)))

    @property
    def selector_phase_epochs(self):
        return self.epochs_per_phase if self.selector_epochs is None else int(self.selector_epochs)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def epsilon_at(self, stage):
        return self.epsilon * self.epsilon_decay ** (stage - 1)

    def learning_rate(self, initial, completed_phases):
        '''
        initial / decay^completed_phases, computed directly so no rounding piles up
        '''
        return initial / self.lr_decay_factor ** completed_phases

    def to_dict(self):
        return dict((key, getattr(self, key)) for key in self.DEFAULTS)


class StructureSampler(object):

    '''
    A distribution p over structures that the estimator phase draws from
    '''

    NAME = None

    def __init__(self, h, n):
        self.h = int(h)
        self.n = int(n)

    def __repr__(self):
        return '<%s h=%d n=%d>' % (self.__class__.__name__, self.h, self.n)

    def sample_batch(self, batch, rng):
        '''
        One structure shared by the whole mini-batch
        '''
        raise NotImplementedError

    def sample_rows(self, x, rng):
        '''
        One structure per input row, as a (rows, n) array
        '''
        raise NotImplementedError


class MixtureSampler(StructureSampler):

    '''
    z* with probability tau, otherwise a uniform draw over all h^n structures
    (z* included)
    '''

    NAME = 'mixture'

    def __init__(self, h, n, tau, rng=None):
        super(MixtureSampler, self).__init__(h, n)
        if not 0 <= tau <= 1:
            raise ContractError('tau must be in [0, 1], got %r' % tau)
        self.tau = float(tau)
        self._rng = rng

    @property
    def full(self):
        return ModelStructure([self.h - 1] * self.n)

    def sample(self, rng=None):
        rng = rng if rng is not None else self._rng
        if rng is None:
            raise ContractError('no random generator given to %r' % self)
        if rng.random() < self.tau:
            return self.full
        return uniform_structure(self.h, self.n, rng)

    def sample_batch(self, batch, rng):
        return self.sample(rng)

    def sample_rows(self, x, rng):
        rows = np.atleast_2d(x).shape[0]
        coins = rng.random(rows)
        uniform = rng.integers(0, self.h, size=(rows, self.n))
        return np.where((coins < self.tau)[:, None], self.h - 1, uniform)

    def probability(self, z):
        levels = z.levels if isinstance(z, ModelStructure) else tuple(z)
        p = (1 - self.tau) / float(self.h ** self.n)
        if all(level == self.h - 1 for level in levels):
            p += self.tau
        return p


class UniformSampler(MixtureSampler):

    NAME = 'uniform'

    def __init__(self, h, n, rng=None):
        super(UniformSampler, self).__init__(h, n, 0.0, rng=rng)


class SelectorSampler(StructureSampler):

    '''
    p = g(x; theta_sel)

    A mini-batch gets the structure sampled from the distribution of one of
    its examples, picked at random.
    '''

    NAME = 'selector'

    def __init__(self, params_sel, epsilon=0.0):
        super(SelectorSampler, self).__init__(params_sel.h, params_sel.n)
        self.params_sel = params_sel
        self.epsilon = epsilon

    def sample_batch(self, batch, rng):
        c = distribute(self.params_sel, batch.x).data
        if c.ndim == 2:
            return epsilon_greedy_sample(c, self.epsilon, rng)
        return epsilon_greedy_sample(c[int(rng.integers(len(batch)))], self.epsilon, rng)

    def sample_rows(self, x, rng):
        c = distribute(self.params_sel, np.atleast_2d(x)).data
        structures = sample_structures(c, rng, 1)[:, 0]
        if self.epsilon > 0:
            explore = rng.random(structures.shape[0]) < self.epsilon
            uniform = rng.integers(0, self.h, size=structures.shape)
            structures = np.where(explore[:, None], uniform, structures)
        return structures


def initial_structure_sampler(h, n, tau, rng=None):
    return MixtureSampler(h, n, tau, rng=rng)


def epsilon_greedy_sample(c, epsilon, rng):
    '''
    A uniform structure with probability epsilon, otherwise a draw from C

    With epsilon = 0 the generator is consumed exactly as sample_structure()
    would consume it.
    '''
    if not 0 <= epsilon <= 1:
        raise ContractError('epsilon must be in [0, 1], got %r' % epsilon)
    c = np.asarray(c.data if hasattr(c, 'data') else c, dtype=np.float64)
    if epsilon > 0 and rng.random() < epsilon:
        return uniform_structure(c.shape[0], c.shape[1], rng)
    return sample_structure(c, rng)


class ConvergenceRule(object):

    '''
    Stops a phase once the monitored value has failed to improve by more than
    `min_improvement` (relative) for `patience` consecutive epochs, or after
    `max_epochs`
    '''

    def __init__(self, patience, min_improvement, max_epochs):
        self.patience = patience
        self.min_improvement = min_improvement
        self.max_epochs = max_epochs
        self.best = None
        self.stale = 0
        self.epochs = 0

    def update(self, value):
        self.epochs += 1
        if self.best is None or value < self.best - self.min_improvement * abs(self.best):
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience or self.epochs >= self.max_epochs


class ValidationStats(object):

    def __init__(self, loss, accuracy, mean_density, mean_flops, objective):
        self.loss = loss
        self.accuracy = accuracy
        self.mean_density = mean_density
        self.mean_flops = mean_flops
        self.objective = objective

    def __repr__(self):
        return '<ValidationStats objective=%.6f density=%.4f>' % (self.objective, self.mean_density)


def validation_stats(params_est, estimator_config, datasets, sampler, rng, rho):
    '''
    Per-task loss/accuracy and pooled cost with one sampled structure per
    example; `objective` is the mean reward over all examples
    '''
    loss = {}
    accuracy = {}
    densities = []
    flops = []
    rewards = []
    for t in sorted(datasets):
        dataset = datasets[t]
        structures = sampler.sample_rows(dataset.x, rng)
        logits = forward_rows(params_est, estimator_config, dataset.x, structures, t)
        values = cross_entropy_values(logits, dataset.y)
        loss[t] = float(np.mean(values))
        accuracy[t] = float(np.mean(np.argmax(logits, axis=1) == dataset.y))
        dens, _, flop = structure_costs(estimator_config, structures, t)
        densities.append(dens)
        flops.append(flop)
        rewards.append(values + structure_penalties(estimator_config, structures, rho))
    return ValidationStats(
        loss, accuracy,
        float(np.mean(np.concatenate(densities))),
        float(np.mean(np.concatenate(flops))),
        float(np.mean(np.concatenate(rewards))),
    )


class StageState(object):

    '''
    Everything the training loop carries from one phase to the next
    '''

    def __init__(self, estimator_config, params_est, params_sel, sampler, est_state, sel_state, seed,
                 on_record=None, clock=None):
        self.estimator_config = estimator_config
        self.params_est = params_est
        self.params_sel = params_sel
        self.sampler = sampler
        self.est_state = est_state
        self.sel_state = sel_state
        self.stage = 1
        self.epsilon = 0.0
        self.completed = dict((phase, 0) for phase in PHASES)
        # Global epoch count, drives the batch shuffling
        self.epoch_counter = 0
        self.records = []
        self.rng = np.random.default_rng([seed, 1])
        self.on_record = on_record
        self.clock = clock
        self._start = clock() if clock is not None else None
        self._display = Display()

    def __repr__(self):
        return '<StageState stage=%d sampler=%r lr_est=%g lr_sel=%g>' % (
            self.stage, self.sampler, self.est_state.learning_rate, self.sel_state.learning_rate)

    def eval_rng(self, config, phase):
        # Fixed per phase, so epochs are compared on the same draws
        return np.random.default_rng([config.seed, 2, self.stage, PHASES.index(phase)])

    def emit(self, phase, epoch, stats, train_value):
        record = {
            'stage': self.stage,
            'phase': phase,
            'epoch': epoch,
            'loss': dict((str(t), v) for t, v in stats.loss.items()),
            'accuracy': dict((str(t), v) for t, v in stats.accuracy.items()),
            'mean_density': stats.mean_density,
            'mean_flops': stats.mean_flops,
            'objective': stats.objective,
            'train_value': train_value,
            'epsilon': self.epsilon,
            'lr_est': self.est_state.learning_rate,
            'lr_sel': self.sel_state.learning_rate,
            'wall_seconds': (self.clock() - self._start) if self.clock is not None else None,
        }
        self.records.append(record)
        self._display.v('stage %d %s epoch %d: objective %.5f density %.4f accuracy %s' % (
            self.stage, phase, epoch, stats.objective, stats.mean_density,
            ' '.join('%d:%.4f' % (t, a) for t, a in sorted(stats.accuracy.items()))))
        if self.on_record is not None:
            self.on_record(record)
        return record

    def decay(self, config, phase):
        self.completed[phase] += 1
        if phase == ESTIMATOR_PHASE:
            lr = config.learning_rate(config.lr_est, self.completed[phase])
            self.est_state = self.est_state.with_learning_rate(lr)
        else:
            lr = config.learning_rate(config.lr_sel, self.completed[phase])
            self.sel_state = self.sel_state.with_learning_rate(lr)
        self._display.v('stage %d: %s learning rate decayed to %g' % (self.stage, phase, lr))


def init_state(config, estimator_config, selector_hidden=DEFAULT_HIDDEN_WIDTH, on_record=None, clock=None):
    '''
    Fresh networks, optimizers and the stage-1 sampler
    '''
    dtype = config.np_dtype
    h, n = estimator_config.h, estimator_config.n
    params_est = build_estimator(estimator_config, [config.seed, 0], dtype)
    params_sel = build_selector(estimator_config.input_width, selector_hidden, h, n, [config.seed, 1], dtype)
    if config.initial_distribution == 'mixture':
        sampler = initial_structure_sampler(h, n, config.tau)
    elif config.initial_distribution == 'uniform':
        sampler = UniformSampler(h, n)
    else:
        sampler = SelectorSampler(params_sel)
    return StageState(
        estimator_config, params_est, params_sel, sampler,
        sgd(config.lr_est, momentum=config.momentum), adam(config.lr_sel),
        config.seed, on_record=on_record, clock=clock,
    )


def train_estimator_phase(state, data, config):
    '''
    One structure from p per mini-batch, one SGD step on its masked loss,
    until the convergence rule fires; then decay lr_est
    '''
    display = Display()
    rule = ConvergenceRule(config.patience, config.min_improvement, config.epochs_per_phase)
    epoch = 0
    stop = False
    while not stop:
        epoch += 1
        losses = []
        for batch in interleave(data['train'], config.batch_size, config.seed, epoch=state.epoch_counter):
            z = state.sampler.sample_batch(batch, state.rng)
            try:
                state.params_est, state.est_state, loss = estimator_update(
                    state.params_est, state.estimator_config, batch, z, state.est_state)
            except NumericError as e:
                display.error('estimator phase of stage %d aborted in epoch %d (task %d, structure %s): %s' % (
                    state.stage, epoch, batch.task, z.encode(), str(e)))
                raise
            display.vvv('  task %d structure %s loss %.6f' % (batch.task, z.encode(), loss))
            losses.append(loss)
        state.epoch_counter += 1
        stats = validation_stats(state.params_est, state.estimator_config, data['val'], state.sampler,
                                 state.eval_rng(config, ESTIMATOR_PHASE), config.rho)
        state.emit(ESTIMATOR_PHASE, epoch, stats, float(np.mean(losses)))
        stop = rule.update(stats.objective)
    state.decay(config, ESTIMATOR_PHASE)
    return state


def train_selector_phase(state, data, config):
    '''
    Score-function gradient steps (Adam) on the selector with epsilon-greedy
    sampling; then decay lr_sel and make the selector the new sampler
    '''
    display = Display()
    epochs = config.selector_phase_epochs
    rule = ConvergenceRule(config.patience, config.min_improvement, epochs)
    epoch = 0
    stop = epochs == 0
    while not stop:
        epoch += 1
        rewards = []
        for batch in interleave(data['train'], config.batch_size, config.seed, epoch=state.epoch_counter):
            try:
                grads, _, batch_rewards = selector_gradient_estimate(
                    state.params_sel, state.params_est, state.estimator_config, batch, config.sample_count,
                    config.rho, state.rng, epsilon=state.epsilon, baseline=config.baseline,
                    leave_one_out=config.leave_one_out)
                arrays, state.sel_state = optimizer_step(state.sel_state, state.params_sel, grads)
            except NumericError as e:
                display.error('selector phase of stage %d aborted in epoch %d (task %d): %s' % (
                    state.stage, epoch, batch.task, str(e)))
                raise
            state.params_sel = state.params_sel.replace(arrays)
            display.vvv('  task %d mean reward %.6f' % (batch.task, float(np.mean(batch_rewards))))
            rewards.append(float(np.mean(batch_rewards)))
        state.epoch_counter += 1
        stats = validation_stats(state.params_est, state.estimator_config, data['val'],
                                 SelectorSampler(state.params_sel), state.eval_rng(config, SELECTOR_PHASE), config.rho)
        state.emit(SELECTOR_PHASE, epoch, stats, float(np.mean(rewards)))
        stop = rule.update(stats.objective)
    state.decay(config, SELECTOR_PHASE)
    state.sampler = SelectorSampler(state.params_sel)
    return state


class TrainingResult(object):

    def __init__(self, params_est, params_sel, records, state=None):
        self.params_est = params_est
        self.params_sel = params_sel
        self.records = records
        self.state = state


def check_datasets(datasets, estimator_config):
    '''
    Raise ConfigError unless every split needed for training covers exactly
    the configured tasks with matching widths and class counts
    '''
    for split in ('train', 'val'):
        if split not in datasets or not datasets[split]:
            raise ConfigError("no '%s' datasets given" % split, key='data')
        known = sorted(t.task_id for t in estimator_config.tasks)
        if sorted(datasets[split]) != known:
            raise ConfigError('%s split has tasks %s but the estimator has %s' % (
                split, sorted(datasets[split]), known), key='estimator.tasks')
        for t, dataset in datasets[split].items():
            if dataset.width != estimator_config.input_width:
                raise ConfigError('task %d %s inputs have width %d, estimator expects %d' % (
                    t, split, dataset.width, estimator_config.input_width), key='estimator.input_width')
            if dataset.classes != estimator_config.task(t).classes:
                raise ConfigError('task %d has %d classes in the data but %d in the estimator' % (
                    t, dataset.classes, estimator_config.task(t).classes), key='estimator.tasks')


def run_training(config, datasets, estimator_config, selector_hidden=DEFAULT_HIDDEN_WIDTH, on_record=None,
                 clock=None):
    '''
    S stages of estimator phase then selector phase

    `on_record` is called with every per-epoch metrics record as it is
    produced. `clock` (e.g. time.perf_counter) fills in wall_seconds; without
    it the records depend only on the seed.
    '''
    check_datasets(datasets, estimator_config)
    display = Display()
    state = init_state(config, estimator_config, selector_hidden, on_record=on_record, clock=clock)
    display.v('training %d blocks x %d levels on tasks %s, initial sampler %r' % (
        estimator_config.n, estimator_config.h, sorted(datasets['train']), state.sampler))
    for stage in range(1, config.stages + 1):
        state.stage = stage
        state.epsilon = config.epsilon_at(stage)
        display.v('stage %d/%d, epsilon %g' % (stage, config.stages, state.epsilon))
        state = train_estimator_phase(state, datasets, config)
        state = train_selector_phase(state, datasets, config)
    return TrainingResult(state.params_est, state.params_sel, state.records, state)


def train_dense_baseline(config, datasets, estimator_config):
    '''
    Plain training of the full network through dense_forward(), with the
    same seeds, batches, optimizer and stopping rule as the first estimator
    phase of run_training()

    Heads of tasks outside the batch are frozen the same way.
    '''
    check_datasets(datasets, estimator_config)
    params = build_estimator(estimator_config, [config.seed, 0], config.np_dtype)
    state = sgd(config.lr_est, momentum=config.momentum)
    full = estimator_config.full_structure()
    sampler = initial_structure_sampler(estimator_config.h, estimator_config.n, 1.0)
    rule = ConvergenceRule(config.patience, config.min_improvement, config.epochs_per_phase)
    epoch = 0
    stop = False
    while not stop:
        for batch in interleave(datasets['train'], config.batch_size, config.seed, epoch=epoch):
            tracked = params.tracked()
            loss = cross_entropy(dense_forward(tracked, estimator_config, batch.x, batch.task), batch.y)
            backward(loss)
            masks = active_masks(params, estimator_config, [full], batch.task)
            arrays, state = optimizer_step(state, params, gradients(tracked), masks=masks)
            params = params.replace(arrays)
        epoch += 1
        stats = validation_stats(params, estimator_config, datasets['val'], sampler, np.random.default_rng(0),
                                 config.rho)
        stop = rule.update(stats.objective)
    return params
