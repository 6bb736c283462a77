import click
from pathlib import Path
from typing import Any, Callable, Optional

from config import COMMANDS, ExperimentConfig
from nomore.experiments import (
    run_assertions,
    run_noise_sim,
    run_sensitivity,
    run_train_compare,
    run_variance,
)
from nomore.report import emit_report, ensure_writable
from utils.logger import configure_logging, logger

WRAPPER_CHOICES = ['bn', 'ln', 'skipinit', 'nomore']


@click.group()
@click.option('--log-file', type=click.Path(), help='日志文件路径')
@click.option('--log-level',
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']),
              default='INFO',
              help='日志级别')
@click.version_option(version='0.1.0')
def cli(log_file: Optional[str], log_level: str):
    """NoMore 实验工具

    比较 BatchNorm、SkipInit 与 NoMore 残差块：
    验证 batch 噪声的统计断言、方差传播、训练精度与速度、噪声幅度敏感性。
    """
    configure_logging(log_level, log_file)


def experiment_options(func: Callable) -> Callable:
    """所有实验命令共用的选项；未给出的选项保留配置文件中的值"""
    options = [
        click.option('--config', 'config_file', type=click.Path(exists=True), help='YAML 配置文件'),
        click.option('--seed', type=int, help='随机种子'),
        click.option('--out', 'output_dir', type=click.Path(), help='输出目录'),
        click.option('--gamma-noise', type=float, help='NoMore 噪声幅度 γ_noise'),
        click.option('--wrapper', type=click.Choice(WRAPPER_CHOICES), help='残差块包装'),
        click.option('--dataset', help='synth 或 cifar10:PATH'),
        click.option('--bench/--no-bench', default=None, help='基准模式：逐个运行并记录内存'),
        click.option('--workers', type=int, help='并行运行的 (包装, 种子) 任务数'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def load_config(command: str, config_file: Optional[str], **flags: Any) -> ExperimentConfig:
    """配置文件 → 命令默认值 → 命令行覆盖"""
    config = ExperimentConfig(config_file, command=command)
    return config.override(**flags)


def run_command(command: str, driver: Callable[[ExperimentConfig], Any], config_file: Optional[str],
                **flags: Any) -> None:
    """加载配置、确认输出目录可写、运行驱动并写出报告"""
    try:
        config = load_config(command, config_file, **flags)
        output_dir = ensure_writable(config.output_dir)
        logger.info(f"Running {command} (seed {config.seed}, config {config.config_hash()})")
        result = driver(config)
        written = emit_report(result.report, output_dir)
        summary = next(p for p in written if p.name.endswith('.txt'))
        click.echo(summary.read_text(encoding='utf-8'))
    except Exception as e:
        logger.exception(f"{command} failed: {e}")
        raise click.ClickException(str(e))


@cli.command()
@experiment_options
def assertions(config_file, **flags):
    """三条 batch 噪声断言的 Hotelling T² 检验

    示例：
    \b
    nomore assertions --seed 1 --out results
    """
    run_command('assertions', run_assertions, config_file, **flags)


@cli.command()
@experiment_options
def variance(config_file, wrapper, **flags):
    """初始化时逐块激活方差的传播（不指定 --wrapper 时比较全部包装）"""
    wrappers = [wrapper] if wrapper else None
    run_command('variance', lambda config: run_variance(config, wrappers), config_file, wrapper=wrapper, **flags)


@cli.command('train-compare')
@experiment_options
def train_compare(config_file, **flags):
    """成对训练 BN / SkipInit / NoMore，比较精度与逐步耗时"""
    run_command('train-compare', run_train_compare, config_file, **flags)


@cli.command()
@experiment_options
@click.option('--gamma', 'gammas', type=float, multiple=True, help='γ_noise 网格（可重复给出）')
def sensitivity(config_file, gammas, **flags):
    """NoMore 精度随 γ_noise 的变化曲线"""
    if gammas:
        flags['gammas'] = list(gammas)
    run_command('sensitivity', run_sensitivity, config_file, **flags)


@cli.command('noise-sim')
@experiment_options
@click.option('--full-bn/--simplified', default=None, help='模拟时保留 BN 分母')
def noise_sim(config_file, **flags):
    """模拟固定样本受到的 BN batch 噪声并与闭式解对比"""
    run_command('noise-sim', run_noise_sim, config_file, **flags)


@cli.command()
@click.argument('config_file', type=click.Path())
@click.option('--command', type=click.Choice(list(COMMANDS)), default='train-compare', help='配置对应的命令')
@click.option('--force/--no-force', default=False, help='强制覆盖已存在的配置文件')
def init_config(config_file: str, command: str, force: bool):
    """初始化配置文件

    创建一个包含该命令全部默认值的 YAML 配置文件。

    示例：
    \b
    nomore init-config noise.yaml --command noise-sim
    """
    try:
        config_path = Path(config_file)
        if config_path.exists() and not force:
            raise click.ClickException(
                f"Config file {config_file} already exists. Use --force to overwrite."
            )

        config = ExperimentConfig.defaults_for(command)
        config.save(config_file)
        logger.info(f"Created config file: {config_file}")

    except click.ClickException:
        raise
    except Exception as e:
        logger.exception(f"Failed to create config file: {e}")
        raise click.ClickException(str(e))


def main():
    cli()


if __name__ == '__main__':
    main()
